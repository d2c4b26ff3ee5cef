"""Command-line entry point: ``tgwish <command> [options]``.

Options may also come from a ``key = value`` file given with ``--config``;
flags on the command line win. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("tgwish")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# -- configuration ------------------------------------------------------------


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _merge(args, parser_defaults: dict, types: dict) -> dict:
    """Flags (non-None) over config values over parser defaults."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = set(cfg) - set(parser_defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = {}
    for key, default in parser_defaults.items():
        flag = getattr(args, key, None)
        if flag is not None and flag != []:
            merged[key] = flag
        elif key in cfg:
            conv = types.get(key, str)
            try:
                merged[key] = conv(cfg[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
        else:
            merged[key] = default
    return merged


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _ints(text) -> list[int]:
    return [int(round(x)) for x in _floats(text)]


def _names(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return list(text)
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _tables(specs) -> dict:
    """``flavor=path`` pairs."""
    out = {}
    for spec in _names(specs) if isinstance(specs, str) else (specs or []):
        if "=" not in spec:
            raise ConfigError(f"table spec {spec!r} must look like flavor=path")
        k, v = spec.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# -- manifests ----------------------------------------------------------------


class Manifest:
    """Run record written before any computation and updated on exit."""

    def __init__(self, path, command: str, config: dict):
        self.path = Path(path)
        self.t0 = time.perf_counter()
        self.doc = {"command": command, "version": __version__,
                    "python": platform.python_version(), "numpy": np.__version__,
                    "started": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                    "status": "running", "config": _jsonable(config)}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.write()

    def write(self):
        self.path.write_text(json.dumps(self.doc, indent=1, sort_keys=True) + "\n")

    def finish(self, status="ok", **extra):
        self.doc.update(_jsonable(extra))
        self.doc["status"] = status
        self.doc["wall_seconds"] = round(time.perf_counter() - self.t0, 3)
        self.write()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "digest") and hasattr(obj, "n"):
        return f"graph(n={obj.n}, digest={obj.digest()})"
    return obj


# -- shared loaders -----------------------------------------------------------


def _load_graph(path):
    from .graph import read_graph
    if path is None:
        raise ConfigError("--graph is required")
    try:
        return read_graph(path)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"bad graph file {path}: {exc}") from None


def _load_table(path, graph, delta, truncated, fixed_first, grid):
    from .wishfam import NormConstTable
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise DataError(f"table file not found: {p}")
    table = NormConstTable.load(p)
    try:
        table.check_matches(graph, delta, truncated, fixed_first)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if len(grid) > 1 and (table.grid.size != len(grid) or not np.allclose(table.grid, grid)):
        raise ConfigError("table grid differs from the requested rho grid")
    return table


def _need_table(flavor, grid, table):
    if flavor != "car" and len(grid) > 1 and table is None:
        raise ConfigError(f"flavor {flavor!r} needs a normalising-constant table; "
                          "run 'tgwish normconst' first and pass it with --table")


def _grid(spec):
    from .spatial import COARSE_RHO_GRID, RHO_GRID
    if spec in (None, "default", "grid"):
        return RHO_GRID.copy()
    if spec == "coarse":
        return COARSE_RHO_GRID.copy()
    vals = np.array(_floats(spec))
    if vals.size == 0 or np.any(vals < 0) or np.any(vals >= 1) or np.any(np.diff(vals) <= 0):
        raise ConfigError("rho grid must be increasing values in [0, 1)")
    return vals


def _require_seed(cfg):
    if cfg.get("seed") is None:
        raise ConfigError("--seed is required (no default entropy)")
    return int(cfg["seed"])


# -- commands -----------------------------------------------------------------


NORMCONST = {"graph": None, "out": None, "seed": None, "delta": 3.0, "model": "uni",
             "flavor": "tgw", "chains": 10, "iters": 100_000, "grid": None, "sigma_m": 2.0,
             "pin": None, "jobs": 1}
NORMCONST_T = {"delta": float, "chains": int, "iters": int, "seed": int, "sigma_m": float,
               "pin": _bool, "jobs": int}


def cmd_normconst(args) -> int:
    from .wishfam import build_table
    cfg = _merge(args, NORMCONST, NORMCONST_T)
    seed = _require_seed(cfg)
    if cfg["out"] is None:
        raise ConfigError("--out is required")
    if cfg["flavor"] not in ("tgw", "gw"):
        raise ConfigError("normconst flavor must be tgw or gw")
    g = _load_graph(cfg["graph"])
    grid = _grid(cfg["grid"])
    pin = cfg["pin"] if cfg["pin"] is not None else cfg["model"] == "uni"
    fixed_first = float(g.degrees()[0]) if pin else None
    out = Path(cfg["out"])
    try:
        man = Manifest(out.with_suffix(".manifest.json"), "normconst", cfg)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from None

    def progress(k, a, b, v):
        log.info("log I(%.2f) - log I(%.2f) = %.5f", a, b, v)

    table = build_table(g, cfg["delta"], grid, cfg["flavor"] == "tgw", fixed_first,
                        chains=cfg["chains"], iters=cfg["iters"], seed=seed,
                        sigma_m=cfg["sigma_m"], n_jobs=cfg["jobs"], progress=progress)
    table.save(out)
    man.finish(table=str(out), cache_key=table.cache_key)
    return 0


FIT = {"graph": None, "data": None, "out": None, "seed": None, "model": "uni", "flavor": "tgw",
       "table": None, "grid": None, "rho": None, "iters": 10_000, "burn": 1_000, "thin": 10,
       "chains": 1, "delta": 3.0, "delta_c": 3.0, "gc_mode": "random", "pin": None,
       "sigma2_alpha": 1.0, "sigma2_beta": 100.0, "sigma2_m": 100.0, "a": 0.5, "b": 0.0015}
FIT_T = {"iters": int, "burn": int, "thin": int, "chains": int, "seed": int, "delta": float,
         "delta_c": float, "pin": _bool, "sigma2_alpha": float, "sigma2_beta": float,
         "sigma2_m": float, "a": float, "b": float, "rho": float}


def cmd_fit(args) -> int:
    cfg = _merge(args, FIT, FIT_T)
    seed = _require_seed(cfg)
    if cfg["out"] is None or cfg["data"] is None:
        raise ConfigError("--data and --out are required")
    if cfg["flavor"] not in ("tgw", "gw", "car"):
        raise ConfigError("flavor must be tgw, gw or car")
    g = _load_graph(cfg["graph"])
    grid = np.array([cfg["rho"]]) if cfg["rho"] is not None else _grid(cfg["grid"])
    out = Path(cfg["out"])
    if cfg["model"] == "uni":
        return _fit_uni(cfg, g, grid, seed, out)
    if cfg["model"] == "multi":
        return _fit_multi(cfg, g, grid, seed, out)
    raise ConfigError("model must be uni or multi")


def _read_data(reader, path, g):
    if not Path(path).exists():
        raise DataError(f"data file not found: {path}")
    try:
        return reader(path, g)
    except (ValueError, KeyError) as exc:
        raise DataError(str(exc)) from None


def _fit_uni(cfg, g, grid, seed, out):
    from .model_uni import UniPriorConfig, fit_univariate, read_areal_csv
    data = _read_data(read_areal_csv, cfg["data"], g)
    w1 = float(g.degrees()[0])
    table = _load_table(cfg["table"], g, cfg["delta"], cfg["flavor"] == "tgw", w1, grid)
    _need_table(cfg["flavor"], grid, table)
    prior = UniPriorConfig(sigma2_alpha=cfg["sigma2_alpha"], sigma2_beta=cfg["sigma2_beta"],
                           a=cfg["a"], b=cfg["b"], delta=cfg["delta"], n_iter=cfg["iters"],
                           burn=cfg["burn"], thin=cfg["thin"], seed=seed,
                           rho_init=float(grid[grid.size // 2]) if grid.size > 1 else 0.8,
                           rho_fixed=float(grid[0]) if grid.size == 1 else None)
    man = Manifest(out / "manifest.json", "fit", {**cfg, "prior": asdict(prior)})
    samples = fit_univariate(data, prior, table, cfg["flavor"], grid=grid,
                             chains=cfg["chains"], store_K=False)
    _write_outputs(samples, out, ["theta", "u", "alpha", "beta", "tau2", "rho"])
    man.finish(acceptance=samples.acceptance, diagnostics=samples.diagnostics)
    return 0


def _fit_multi(cfg, g, grid, seed, out):
    from .model_multi import (MultiPriorConfig, edge_inclusion_probs, fit_multivariate,
                              predictive_moments, read_multi_csv)
    data = _read_data(read_multi_csv, cfg["data"], g)
    pin = bool(cfg["pin"])
    table = _load_table(cfg["table"], g, cfg["delta"], cfg["flavor"] == "tgw",
                        float(g.degrees()[0]) if pin else None, grid)
    _need_table(cfg["flavor"], grid, table)
    prior = MultiPriorConfig(kr_flavor=cfg["flavor"], gc_mode=cfg["gc_mode"],
                             delta_R=cfg["delta"], delta_C=cfg["delta_c"],
                             sigma2_M=cfg["sigma2_m"],
                             rho_prior=_multi_rho_prior(grid),
                             pin_KR=pin, n_iter=cfg["iters"], burn=cfg["burn"],
                             thin=cfg["thin"], seed=seed,
                             rho_init=float(grid[grid.size // 2]) if grid.size > 1 else 0.8)
    man = Manifest(out / "manifest.json", "fit", {**cfg, "prior": asdict(prior)})
    samples = fit_multivariate(data, prior, table, chains=cfg["chains"], store_K=False)
    _write_outputs(samples, out, ["theta", "M", "rho", "K_C"])
    mean, var = predictive_moments(samples, data.E)
    with (out / "predictive.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id", "outcome", "y", "holdout", "pred_mean", "pred_var"])
        for i in range(data.n):
            for c in range(data.C):
                w.writerow([g.label_of(i), data.outcomes[c], int(data.Y[i, c]),
                            int(data.mask[i, c]), f"{mean[i, c]:.10g}", f"{var[i, c]:.10g}"])
    if "gc_edges" in samples:
        np.savetxt(out / "edge_inclusion.csv", edge_inclusion_probs(samples), delimiter=",",
                   fmt="%.6f", header=",".join(data.outcomes), comments="")
    vals, counts = np.unique(samples["rho"], return_counts=True)
    with (out / "rho_hist.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "frequency"])
        for v, c in zip(vals, counts):
            w.writerow([f"{v:.2f}", f"{c / counts.sum():.6f}"])
    man.finish(acceptance=samples.acceptance, diagnostics=samples.diagnostics)
    return 0


def _multi_rho_prior(grid):
    from .spatial import COARSE_RHO_GRID, RHO_GRID
    if grid.size == 1:
        return float(grid[0])
    for name, ref in (("grid", RHO_GRID), ("coarse", COARSE_RHO_GRID)):
        if grid.size == ref.size and np.allclose(grid, ref):
            return name
    raise ConfigError("the multivariate model takes the default grid, the coarse grid "
                      "or a fixed rho")


def _write_outputs(samples, out, names):
    out.mkdir(parents=True, exist_ok=True)
    names = [n for n in names if n in samples and np.size(samples[n]) > 0]
    samples.write_summary(out / "summary.csv", names)
    samples.write_traces(out, names)


BENCH = {"out": None, "seed": None, "sizes": "30", "densities": "0.1,0.4", "reps": 5,
         "iters": 1000, "delta": 3.0}
BENCH_T = {"reps": int, "iters": int, "seed": int, "delta": float}


def bench_cell(n: int, density: float, reps: int, iters: int, delta: float, rng) -> list[float]:
    """Seconds per ``iters`` truncated sweeps on ``reps`` RCM-ordered random graphs.

    Each graph uses rate ``(delta - 2) (I + D_w - 0.9 W)^{-1}``.
    """
    from . import _kernels as kern
    from .graph import random_graph, rcm_order
    from .wishfam import TruncGWishartParams, initial_factor
    times = []
    for _ in range(reps):
        g = random_graph(n, density, rng)
        g = g.permute(rcm_order(g))
        W = g.weights()
        Q = np.eye(n) + np.diag(W.sum(axis=1)) - 0.9 * W
        p = TruncGWishartParams(g, delta, (delta - 2.0) * np.linalg.inv(Q), True)
        phi = initial_factor(p).phi.copy()
        bufs = kern.SweepBuffers(n)
        counts = np.zeros(kern.N_COUNTS, np.int64)
        args = (g.adjacency(), p.nu, delta, p.D, True, False, 2.0)
        seed = int(rng.integers(0, 2**31 - 1))
        # warm-up outside the timer (compilation on first use)
        kern.run_chain(phi.copy(), *args, 1, 1, 0, seed, counts.copy(), *bufs.args())
        t0 = time.perf_counter()
        st, _ = kern.run_chain(phi, *args, 1, iters, 0, seed, counts, *bufs.args())
        times.append(time.perf_counter() - t0)
        if st != kern.OK:
            raise FloatingPointError("benchmark chain left the cone")
    return times


def cmd_bench(args) -> int:
    cfg = _merge(args, BENCH, BENCH_T)
    seed = _require_seed(cfg)
    if cfg["out"] is None:
        raise ConfigError("--out is required")
    sizes, dens = _ints(cfg["sizes"]), _floats(cfg["densities"])
    if any(n < 2 for n in sizes) or any(not 0 < d <= 1 for d in dens):
        raise ConfigError("sizes must be >= 2 and densities in (0, 1]")
    out = Path(cfg["out"])
    man = Manifest(out.with_suffix(".manifest.json"), "bench", cfg)
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        for d in dens:
            t = np.array(bench_cell(n, d, cfg["reps"], cfg["iters"], cfg["delta"], rng))
            rows.append({"n": n, "density": d, "reps": cfg["reps"], "iters": cfg["iters"],
                         "mean_seconds": t.mean(), "sd_seconds": t.std(ddof=1) if t.size > 1 else 0.0})
            log.info("n=%d density=%.2f: %.3f s per %d iterations", n, d, t.mean(), cfg["iters"])
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    for n in sizes:
        cell = [r for r in rows if r["n"] == n]
        for a, b in zip(cell, cell[1:]):
            log.info("n=%d: density %.2f -> %.2f changes time by x%.2f", n, a["density"],
                     b["density"], b["mean_seconds"] / a["mean_seconds"])
    man.finish(rows=rows)
    return 0


SIMULATE = {"out": None, "seed": None, "cancer": "larynx", "m": 1.0, "s": 1,
            "counties": "all", "labels": None, "flavors": "tgw,gw", "table": [],
            "iters": 10_000, "burn": 1_000, "thin": 10, "delta": 3.0, "rho": None}
SIMULATE_T = {"m": float, "s": int, "iters": int, "burn": int, "thin": int, "seed": int,
              "delta": float, "rho": float}


def cmd_simulate(args) -> int:
    from .experiments import (SE_COUNTIES, MetricReport, SimScenario, coverage_report,
                              effective_params, ramse, read_labels, simulate_counts,
                              write_reports)
    from .model_uni import UniPriorConfig, fit_univariate
    from .spatial import RHO_GRID
    cfg = _merge(args, SIMULATE, SIMULATE_T)
    seed = _require_seed(cfg)
    if cfg["out"] is None:
        raise ConfigError("--out is required")
    if cfg["counties"] in ("all", "se"):
        counties = None if cfg["counties"] == "all" else SE_COUNTIES
    else:
        counties = tuple(_names(cfg["counties"]))
    try:
        sc = SimScenario.washington(cfg["cancer"], M=cfg["m"], S=cfg["s"], counties=counties)
        if cfg["labels"]:
            sc.labels = read_labels(cfg["labels"], sc.graph)
    except (ValueError, OSError) as exc:
        raise DataError(str(exc)) from None
    flavors = _names(cfg["flavors"])
    grid = np.array([cfg["rho"]]) if cfg["rho"] is not None else RHO_GRID
    w1 = float(sc.graph.degrees()[0])
    tables = {}
    for f, path in _tables(cfg["table"]).items():
        tables[f] = _load_table(path, sc.graph, cfg["delta"], f == "tgw", w1, grid)
    for f in flavors:
        if f not in ("tgw", "gw", "car"):
            raise ConfigError(f"unknown flavor {f!r}")
        _need_table(f, grid, tables.get(f))
    out = Path(cfg["out"])
    man = Manifest(out / "manifest.json", "simulate", cfg)
    reps = simulate_counts(sc, np.random.default_rng(seed))
    rows, acc = [], {}
    for f in flavors:
        draws, cov, pd, pw = [], [], [], []
        for s, rep in enumerate(reps):
            prior = UniPriorConfig(delta=cfg["delta"], n_iter=cfg["iters"], burn=cfg["burn"],
                                   thin=cfg["thin"], seed=seed * 1000 + s,
                                   rho_fixed=cfg["rho"])
            smp = fit_univariate(rep.data, prior, tables.get(f), f, store_K=False)
            draws.append(smp["theta"])
            cov.append(coverage_report(smp["y_rep"], rep.data.y))
            dic, waic = effective_params(smp["loglik"], rep.data.y, rep.data.E,
                                         smp["theta"].mean(axis=0))
            pd.append(dic)
            pw.append(waic)
            acc[f"{f}/rep{s}"] = smp.acceptance
        rep_ = MetricReport(ramse=ramse([r.theta for r in reps], draws),
                            coverage=_mean_of(cov, "coverage"), length=_mean_of(cov, "length"),
                            length_low=_mean_of(cov, "length_low"),
                            length_high=_mean_of(cov, "length_high"), p_dic=float(np.mean(pd)),
                            p_waic=float(np.mean(pw)), extra={"flavor": f, "S": sc.S})
        rows.append(rep_.as_row())
        log.info("%s: RAMSE %.4f", f, rep_.ramse)
    write_reports(rows, out / "report.csv")
    man.finish(acceptance=acc, length_scale=sc.length_scale)
    return 0


def _mean_of(reports, name):
    vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
    return float(np.mean(vals)) if vals else None


CROSSVAL = {"graph": None, "data": None, "out": None, "seed": None, "flavors": "tgw,car",
            "table": [], "folds": 10, "iters": 5_000, "burn": 1_000, "thin": 5,
            "delta": 3.0, "delta_c": 3.0, "gc_mode": "complete", "rho": None, "pin": False}
CROSSVAL_T = {"folds": int, "iters": int, "burn": int, "thin": int, "seed": int,
              "delta": float, "delta_c": float, "rho": float, "pin": _bool}


def cmd_crossval(args) -> int:
    from .experiments import crossval_multivariate, write_reports
    from .model_multi import MultiPriorConfig, read_multi_csv
    from .spatial import RHO_GRID
    cfg = _merge(args, CROSSVAL, CROSSVAL_T)
    seed = _require_seed(cfg)
    if cfg["out"] is None or cfg["data"] is None:
        raise ConfigError("--data and --out are required")
    g = _load_graph(cfg["graph"])
    data = _read_data(read_multi_csv, cfg["data"], g)
    grid = np.array([cfg["rho"]]) if cfg["rho"] is not None else RHO_GRID
    pin = bool(cfg["pin"])
    tables = {f: _load_table(p, g, cfg["delta"], f == "tgw",
                             float(g.degrees()[0]) if pin else None, grid)
              for f, p in _tables(cfg["table"]).items()}
    flavors = _names(cfg["flavors"])
    for f in flavors:
        if f not in ("tgw", "gw", "car"):
            raise ConfigError(f"unknown flavor {f!r}")
        _need_table(f, grid, tables.get(f))
    out = Path(cfg["out"])
    man = Manifest(out / "manifest.json", "crossval", cfg)
    rows = []
    for f in flavors:
        prior = MultiPriorConfig(kr_flavor=f, gc_mode=cfg["gc_mode"], delta_R=cfg["delta"],
                                 delta_C=cfg["delta_c"], pin_KR=pin,
                                 rho_prior=cfg["rho"] if cfg["rho"] is not None else "grid",
                                 n_iter=cfg["iters"], burn=cfg["burn"], thin=cfg["thin"],
                                 seed=seed)

        def on_fold(k, samples, f=f):
            Manifest(out / f / f"fold_{k}.json", "crossval-fold",
                     {"flavor": f, "fold": k, "seed": seed + k}).finish(
                acceptance=samples.acceptance, diagnostics=samples.diagnostics)

        rep = crossval_multivariate(data, prior, tables.get(f), cfg["folds"], seed, on_fold)
        rep.extra["flavor"] = f
        rows.append(rep.as_row())
        log.info("%s: BIAS2 %.4g VAR %.4g MSE %.4g", f, rep.bias2, rep.var, rep.mse)
    write_reports(rows, out / "report.csv")
    man.finish(report=rows)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tgwish", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, graph=True):
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--seed", type=int, help="RNG seed (required)")
        sp.add_argument("--out", help="output path")
        if graph:
            sp.add_argument("--graph", help="adjacency file (.json or edge list)")

    sp = sub.add_parser("normconst", help="tabulate normalising-constant ratios over the rho grid")
    common(sp)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--model", choices=("uni", "multi"),
                    help="uni pins K_11 to the first degree; multi does not")
    sp.add_argument("--flavor", choices=("tgw", "gw"))
    sp.add_argument("--chains", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--grid", help="'coarse' or comma-separated rho values")
    sp.add_argument("--sigma-m", dest="sigma_m", type=float)
    sp.add_argument("--pin", type=_bool, help="override the K_11 pinning implied by --model")
    sp.add_argument("--jobs", type=int)
    sp.set_defaults(func=cmd_normconst)

    sp = sub.add_parser("fit", help="run the univariate or multivariate sampler")
    common(sp)
    sp.add_argument("--data", help="CSV: area_id,y,E[,covariates] or area_id,outcome,y,E[,holdout]")
    sp.add_argument("--model", choices=("uni", "multi"))
    sp.add_argument("--flavor", choices=("tgw", "gw", "car"))
    sp.add_argument("--table")
    sp.add_argument("--grid")
    sp.add_argument("--rho", type=float, help="fix rho instead of using a grid prior")
    for name in ("iters", "burn", "thin", "chains"):
        sp.add_argument(f"--{name}", type=int)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--delta-c", dest="delta_c", type=float)
    sp.add_argument("--gc-mode", dest="gc_mode", choices=("complete", "fixed", "random"))
    sp.add_argument("--pin", type=_bool)
    for name in ("sigma2_alpha", "sigma2_beta", "sigma2_m", "a", "b"):
        sp.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("bench", help="sweep timing by graph size and edge density")
    common(sp, graph=False)
    sp.add_argument("--sizes")
    sp.add_argument("--densities")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--delta", type=float)
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("simulate", help="simulate, fit and score univariate scenarios")
    common(sp, graph=False)
    sp.add_argument("--cancer", choices=("larynx", "ovarian", "lung"))
    sp.add_argument("--M", dest="m", type=float)
    sp.add_argument("--S", dest="s", type=int)
    sp.add_argument("--counties", help="'all', 'se' or comma-separated county names")
    sp.add_argument("--labels", help="CSV county,label")
    sp.add_argument("--flavors")
    sp.add_argument("--table", action="append", help="flavor=path (repeatable)")
    for name in ("iters", "burn", "thin"):
        sp.add_argument(f"--{name}", type=int)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--rho", type=float)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("crossval", help="k-fold predictive comparison of multivariate flavors")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--flavors")
    sp.add_argument("--table", action="append", help="flavor=path (repeatable)")
    for name in ("folds", "iters", "burn", "thin"):
        sp.add_argument(f"--{name}", type=int)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--delta-c", dest="delta_c", type=float)
    sp.add_argument("--gc-mode", dest="gc_mode", choices=("complete", "fixed", "random"))
    sp.add_argument("--rho", type=float)
    sp.add_argument("--pin", type=_bool)
    sp.set_defaults(func=cmd_crossval)
    return p


def main(argv=None) -> int:
    from .cholspace import InfeasibleStateError
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"tgwish: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"tgwish: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, InfeasibleStateError, np.linalg.LinAlgError) as exc:
        print(f"tgwish: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"tgwish: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
