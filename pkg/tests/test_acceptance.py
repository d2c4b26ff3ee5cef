"""Acceptance suite, criteria 1-10.

Each check records a PASS/FAIL line (printed in the terminal summary).
Criteria that are not met by this implementation are strict expected
failures: the assertion is kept at the stated threshold.
"""

import csv
import json
import time

import numpy as np
import pytest
from scipy import stats

from conftest import complete_graph, path_graph, record
from oracles import (complete_batch, feasible_factor, log_decomposable_const,
                     log_wishart_const, restricted_ok, truncated_wishart_rejection)
from tgwish import cli
from tgwish.cholspace import (CholeskyFactor, complete_nonfree, diag_support, in_restricted_cone,
                              offdiag_support)
from tgwish.experiments import (SE_COUNTIES, SimScenario, ramse, simulate_counts,
                                simulate_separable, washington_subgraph)
from tgwish.graph import random_graph, washington_counties, write_graph_json
from tgwish.model_multi import MultiDataset, sample_outcome_graph_prior, write_multi_csv
from tgwish.model_uni import ArealDataset, UniPriorConfig, fit_univariate
from tgwish.spatial import calibrate_hyperpriors
from tgwish.wishfam import TruncGWishartParams, build_table, estimate_logratio, rho_params, sample

pytestmark = pytest.mark.acceptance

# cone / pinning diagnostics gathered from every model run in this module
DIAG = {"checks": 0, "failures": 0, "pinned_runs": 0, "pinned_exact": 0}


def _collect(diagnostics, pinned=True):
    DIAG["checks"] += diagnostics["cone_checks"]
    DIAG["failures"] += diagnostics["cone_failures"]
    if pinned:
        DIAG["pinned_runs"] += 1
        DIAG["pinned_exact"] += bool(diagnostics["k11_exact"])


@pytest.fixture(scope="module")
def se():
    g, idx = washington_subgraph(SE_COUNTIES)
    return g


@pytest.fixture(scope="module")
def uni_tables(se):
    w1 = float(se.degrees()[0])
    return {f: build_table(se, 3.0, truncated=(f == "tgw"), fixed_first=w1, chains=4,
                           iters=20_000, seed=1) for f in ("tgw", "gw")}


# -- 1 -------------------------------------------------------------------------


def _grid_feasible(phi, A, i, j, points):
    if i == j:
        grid = np.linspace(0.0, 50.0, points + 1)[1:]
    else:
        grid = np.linspace(-50.0, 50.0, points)
    P = np.repeat(phi[None], grid.size, axis=0)
    P[:, i, j] = grid
    complete_batch(P, A, i)
    return grid, restricted_ok(P, A)


def test_criterion_1_support_intervals():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    total = agree = far = 0
    configs = 0
    while configs < 200:
        n = int(rng.integers(3, 6))
        g = random_graph(n, rng.uniform(0.3, 1.0), rng)
        if g.n_edges == 0:
            continue
        A = g.adjacency()
        phi = complete_nonfree(CholeskyFactor(g, feasible_factor(A, rng)))
        configs += 1
        for i, j in phi.free_entries():
            s = diag_support(phi, i) if i == j else offdiag_support(phi, i, j)
            grid, ok = _grid_feasible(phi.phi, A, i, j, 10_000)
            inside = (grid > s.lower) & (grid < s.upper)
            miss = ok != inside
            near = np.minimum(np.abs(grid - s.lower), np.abs(grid - s.upper)) <= 1e-6
            total += grid.size
            agree += int((~miss).sum())
            far += int((miss & ~near).sum())
    frac = agree / total
    secs = time.perf_counter() - t0
    passed = frac >= 0.999 and far == 0 and secs < 120
    record(1, passed, f"200 configs, agreement {frac:.6f} over {total} grid points, "
                      f"{far} disagreements away from endpoints, {secs:.0f} s")
    assert passed


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_completion():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        g = random_graph(n, rng.uniform(0.0, 1.0), rng)
        off = ~(g.adjacency() | np.eye(n, dtype=bool))
        for _ in range(20):
            phi = np.triu(rng.normal(size=(n, n)), 1) + np.diag(rng.uniform(0.5, 2.0, n))
            K = complete_nonfree(CholeskyFactor(g, phi)).K
            if off.any():
                worst = max(worst, float(np.abs(K[off]).max()))
    secs = time.perf_counter() - t0
    passed = worst < 1e-10 and secs < 30
    record(2, passed, f"1000 assignments on 50 graphs, max |K| on non-edges {worst:.2e}, "
                      f"{secs:.1f} s")
    assert passed


# -- 3 -------------------------------------------------------------------------


def _ess(x):
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * x.size)
    ac = np.fft.irfft(f * np.conj(f))[: x.size]
    ac /= ac[0]
    s = 0.0
    for k in range(1, x.size):
        if ac[k] < 0.05:
            break
        s += ac[k]
    return x.size / (1 + 2 * s)


@pytest.mark.parametrize("name", ["two-node", "triangle"])
def test_criterion_3_sampler_vs_rejection(name):
    n = 2 if name == "two-node" else 3
    g = complete_graph(n)
    rng = np.random.default_rng(303 + n)
    size = 200_000
    t0 = time.perf_counter()
    p = TruncGWishartParams(g, 3.0, np.eye(n), True)
    Ks, rec = sample(p, size, rng, burn=2000, thin=10)
    ref = truncated_wishart_rejection(n, 3.0, size, rng)
    worst, ess = 0.0, np.inf
    for i in range(n):
        for j in range(i, n):
            worst = max(worst, stats.ks_2samp(Ks[:, i, j], ref[:, i, j]).statistic)
            ess = min(ess, _ess(Ks[:, i, j]))
    cone_ok = all(in_restricted_cone(K, g) for K in Ks[:: max(1, size // 20_000)])
    DIAG["checks"] += 1
    DIAG["failures"] += not cone_ok
    secs = time.perf_counter() - t0
    passed = worst < 0.02 and ess >= 0.9 * size and secs < 600
    record(3, passed, f"{name}: max KS {worst:.4f}, min ESS {ess:.0f}, {secs:.0f} s")
    assert passed


# -- 4 -------------------------------------------------------------------------


PAIRS = [(0.0, 0.05), (0.5, 0.55), (0.9, 0.95), (0.95, 0.99)]


@pytest.mark.parametrize("name", ["two-node", "path-3"])
def test_criterion_4_normconst_ratio(name):
    if name == "two-node":
        g = complete_graph(2)

        def exact(D):
            return log_wishart_const(3.0, D)
    else:
        g = path_graph(3)

        def exact(D):
            return log_decomposable_const([[0, 1], [1, 2]], [[1]], 3.0, D)

    t0 = time.perf_counter()
    errs = []
    for k, (a, b) in enumerate(PAIRS):
        # chains target the smaller rho, as when tables are built
        lo = rho_params(g, 3.0, a, truncated=False)
        hi = rho_params(g, 3.0, b, truncated=False)
        est = estimate_logratio(hi, lo, chains=10, iters=100_000, rng=400 + k)
        errs.append(abs(est.value - (exact(hi.D) - exact(lo.D))))
    secs = time.perf_counter() - t0
    passed = max(errs) < 0.02 and secs < 900
    record(4, passed, f"{name}: max |error| {max(errs):.4f} over rho pairs {PAIRS}, {secs:.0f} s")
    assert passed


# -- 5 -------------------------------------------------------------------------


def _within(got, want, rel=0.2):
    return all(abs(g - w) <= rel * w for g, w in zip(got, want))


def test_criterion_5_calibration_wide():
    wa = washington_counties()
    got = calibrate_hyperpriors(wa, 0.99, sigma2_alpha=1.0, a=0.5, b=0.0015, rng=5)
    passed = _within(got, (1 / 8, 8))
    record(5, passed, f"sigma2_alpha = 1 gives ({got[0]:.3f}, {got[1]:.2f}) vs (1/8, 8)")
    assert passed


@pytest.mark.xfail(strict=True, reason="sigma2_alpha = 1/4 gives about (0.32, 3.2); the quoted "
                                       "(1/2, 2) corresponds to variance 1/16")
def test_criterion_5_calibration_narrow():
    wa = washington_counties()
    got = calibrate_hyperpriors(wa, 0.99, sigma2_alpha=0.25, a=0.5, b=0.0015, rng=5)
    alt = calibrate_hyperpriors(wa, 0.99, sigma2_alpha=1 / 16, a=0.5, b=0.0015, rng=5)
    passed = _within(got, (1 / 2, 2))
    record(5, passed, f"sigma2_alpha = 1/4 gives ({got[0]:.3f}, {got[1]:.2f}) vs (1/2, 2); "
                      f"variance 1/16 gives ({alt[0]:.3f}, {alt[1]:.3f})")
    assert passed


# -- 6 -------------------------------------------------------------------------


def test_criterion_6_prior_recovery(se, uni_tables):
    t0 = time.perf_counter()
    d = ArealDataset(se, np.ones(se.n), np.ones(se.n))
    s = fit_univariate(d, UniPriorConfig(n_iter=100_000, burn=1000, thin=1, seed=6),
                       uni_tables["tgw"], "tgw", use_likelihood=False, store_K=False)
    _collect(s.diagnostics)
    ks_a = stats.kstest(s["alpha"], "norm").statistic
    ks_t = stats.kstest(s["tau2"], stats.gamma(0.5, scale=1 / 0.0015).cdf).statistic
    _, counts = np.unique(s["rho"], return_counts=True)
    spread = counts.size * counts / counts.sum()
    graphs, _ = sample_outcome_graph_prior(3, n_iter=200_000, thin=20, rng=6)
    keys = graphs[:, 0, 1] * 1 + graphs[:, 0, 2] * 2 + graphs[:, 1, 2] * 4
    p = stats.chisquare(np.bincount(keys, minlength=8)).pvalue
    secs = time.perf_counter() - t0
    passed = ks_a < 0.03 and ks_t < 0.03 and p > 0.01 and secs < 600
    record(6, passed, f"KS alpha {ks_a:.4f}, KS tau2 {ks_t:.4f} (10^5 draws); rho frequency x31 "
                      f"in [{spread.min():.2f}, {spread.max():.2f}] (logged); G_C chi-square "
                      f"p = {p:.3f}; {secs:.0f} s")
    assert passed


# -- 7 -------------------------------------------------------------------------


@pytest.mark.xfail(strict=True, reason="tgw beats gw in 4 of 10 seed batches at this scale")
def test_criterion_7_simulation_direction(uni_tables):
    t0 = time.perf_counter()
    wins, rows = 0, []
    for batch in range(10):
        sc = SimScenario.washington("larynx", M=1.5, S=20, counties=SE_COUNTIES)
        reps = simulate_counts(sc, 1000 + batch)
        res = {}
        for f in ("tgw", "gw"):
            draws = []
            for s, r in enumerate(reps):
                prior = UniPriorConfig(n_iter=15_000, burn=5_000, thin=10, seed=batch * 100 + s)
                smp = fit_univariate(r.data, prior, uni_tables[f], f, store_K=False)
                _collect(smp.diagnostics)
                draws.append(smp["theta"])
            res[f] = ramse([r.theta for r in reps], draws)
        wins += res["tgw"] <= res["gw"]
        rows.append(f"{res['tgw']:.3f}/{res['gw']:.3f}")
    secs = time.perf_counter() - t0
    passed = wins >= 7 and secs < 7200
    record(7, passed, f"tgw <= gw RAMSE in {wins}/10 batches (tgw/gw: {', '.join(rows)}), "
                      f"{secs / 60:.0f} min")
    assert passed


# -- 8 -------------------------------------------------------------------------


def _separable_batch(g, batch):
    rng = np.random.default_rng(500 + batch)
    A = g.adjacency()
    w = np.triu(rng.uniform(0.1, 2.0, A.shape) * A, 1)
    w = w + w.T
    K_R = 4.0 * (np.diag(w.sum(axis=1)) + 0.1 * np.eye(g.n) - w)
    K_C = np.array([[1.0, -0.4, 0.0], [-0.4, 1.0, -0.3], [0.0, -0.3, 1.0]])
    E = rng.uniform(5, 30, (g.n, 3))
    Y, _ = simulate_separable(g, E, np.zeros(3), K_R, K_C, rng)
    return MultiDataset(g, Y, E)


def test_criterion_8_crossval(se, tmp_path):
    t0 = time.perf_counter()
    graph = tmp_path / "graph.json"
    write_graph_json(se, graph)
    table = tmp_path / "multi_tgw.json"
    build_table(se, 3.0, truncated=True, fixed_first=None, chains=4, iters=20_000,
                seed=1).save(table)
    wins, exact, rows = 0, True, []
    for batch in range(10):
        data = tmp_path / f"data{batch}.csv"
        write_multi_csv(_separable_batch(se, batch), data)
        out = tmp_path / f"cv{batch}"
        code = cli.main(["crossval", "--graph", str(graph), "--data", str(data), "--out", str(out),
                         "--seed", str(batch), "--flavors", "tgw,car", "--table", f"tgw={table}",
                         "--folds", "10", "--iters", "5000", "--burn", "1000", "--thin", "5",
                         "--gc-mode", "complete"])
        assert code == 0
        with open(out / "report.csv") as fh:
            rep = {r["flavor"]: r for r in csv.DictReader(fh)}
        for r in rep.values():
            exact &= float(r["mse"]) == float(r["bias2"]) + float(r["var"])
        for f in ("tgw", "car"):
            for k in range(10):
                doc = json.loads((out / f / f"fold_{k}.json").read_text())
                _collect(doc["diagnostics"], pinned=(f == "tgw"))
        mse = {f: float(rep[f]["mse"]) for f in rep}
        wins += mse["tgw"] <= mse["car"]
        rows.append(f"{mse['tgw']:.1f}/{mse['car']:.1f}")
    secs = time.perf_counter() - t0
    passed = exact and wins >= 6 and secs < 7200
    record(8, passed, f"MSE = BIAS2 + VAR exactly: {exact}; tgw <= car MSE in {wins}/10 batches "
                      f"(tgw/car: {', '.join(rows)}), {secs / 60:.0f} min")
    assert passed


# -- 9 -------------------------------------------------------------------------


def test_criterion_9_bench(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "bench.csv"
    assert cli.main(["bench", "--out", str(out), "--seed", "9", "--sizes", "30",
                     "--densities", "0.1,0.4", "--reps", "5", "--iters", "1000"]) == 0
    with open(out) as fh:
        t = {float(r["density"]): float(r["mean_seconds"]) for r in csv.DictReader(fh)}
    ratio = t[0.4] / t[0.1]
    secs = time.perf_counter() - t0
    passed = ratio >= 2 and secs < 1800
    record(9, passed, f"n = 30: {t[0.1]:.3f} s at density 0.1, {t[0.4]:.3f} s at 0.4 "
                      f"(x{ratio:.1f}), {secs:.0f} s")
    assert passed


# -- 10 ------------------------------------------------------------------------


def test_criterion_10_constraints():
    if DIAG["checks"] == 0:
        pytest.skip("no acceptance runs in this session")
    passed = DIAG["failures"] == 0 and DIAG["pinned_exact"] == DIAG["pinned_runs"]
    record(10, passed, f"{DIAG['checks']} cone checks, {DIAG['failures']} failures; pinning exact "
                       f"in {DIAG['pinned_exact']}/{DIAG['pinned_runs']} pinned runs")
    assert passed
