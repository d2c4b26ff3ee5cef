"""Synthetic data generation and evaluation metrics for the simulation and
cross-validation studies."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np
from scipy import optimize

from .graph import (AdjacencyGraph, washington_centroids, washington_counties,
                    washington_population)
from .model_uni import ArealDataset

EARTH_RADIUS_KM = 6371.0

# crude all-ages incidence per 100,000, UK 2008
UK_RATES_2008 = {"larynx": 3.8, "ovarian": 11.0, "lung": 66.0}

# connected ten-county block in the south-east of the state
SE_COUNTIES = ("Adams", "Asotin", "Benton", "Columbia", "Franklin", "Garfield", "Grant",
               "Lincoln", "Walla Walla", "Whitman")


# -- fixtures -----------------------------------------------------------------


def washington_subgraph(counties=SE_COUNTIES) -> tuple[AdjacencyGraph, np.ndarray]:
    """Induced subgraph on named counties and the fixture indices used."""
    g = washington_counties()
    index = {g.label_of(i): i for i in range(g.n)}
    try:
        idx = np.array(sorted(index[c] for c in counties))
    except KeyError as exc:
        raise ValueError(f"unknown county {exc.args[0]!r}") from None
    return g.subgraph(idx), idx


def washington_labels() -> dict[str, int]:
    """Bundled three-level label layout (-1, 0, 1) keyed by county."""
    text = resources.files("tgwish.data").joinpath("wa_labels.csv").read_text()
    return {r["county"]: int(r["label"]) for r in csv.DictReader(io.StringIO(text))}


def read_labels(path, graph: AdjacencyGraph) -> np.ndarray:
    """Label file with columns ``county,label`` aligned to ``graph``."""
    with open(path, newline="") as fh:
        table = {r["county"].strip(): int(r["label"]) for r in csv.DictReader(fh)}
    return _align_labels(table, graph)


def _align_labels(table, graph):
    missing = [graph.label_of(i) for i in range(graph.n) if graph.label_of(i) not in table]
    if missing:
        raise ValueError(f"no label for {missing[:3]}")
    L = np.array([table[graph.label_of(i)] for i in range(graph.n)])
    if not np.all(np.isin(L, (-1, 0, 1))):
        raise ValueError("labels must be -1, 0 or 1")
    return L


def expected_count_fixture(cancer: str, idx=None) -> np.ndarray:
    """Expected counts from 2010 county populations and a UK 2008 crude rate."""
    if cancer not in UK_RATES_2008:
        raise ValueError(f"cancer must be one of {sorted(UK_RATES_2008)}")
    pop = washington_population()
    if idx is not None:
        pop = pop[np.asarray(idx)]
    return pop * UK_RATES_2008[cancer] / 1e5


# -- Matern fields ------------------------------------------------------------


def great_circle(coords) -> np.ndarray:
    """Haversine distances (km) between ``(lat, lon)`` rows in degrees."""
    lat, lon = np.radians(np.asarray(coords, dtype=float)).T
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def matern52(d, length_scale: float) -> np.ndarray:
    """Matern correlation with smoothness 5/2."""
    if length_scale <= 0:
        raise ValueError("length scale must be positive")
    s = np.sqrt(5.0) * np.asarray(d, dtype=float) / length_scale
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def calibrate_range(dist, target: float = 0.5) -> float:
    """Length scale giving median off-diagonal correlation ``target``."""
    d = np.asarray(dist, dtype=float)
    off = d[np.triu_indices(d.shape[0], 1)]
    if off.size == 0 or np.all(off <= 0):
        raise ValueError("need distinct coordinates")
    med = np.median(off)
    # correlation is monotone in d / length_scale, so solve on the median
    return float(optimize.brentq(lambda ls: matern52(med, ls) - target, med * 1e-3, med * 1e3,
                                 xtol=1e-12 * med))


def matern_field(dist, length_scale: float, rng=None, size=None) -> np.ndarray:
    """Zero-mean unit-variance Gaussian draw(s) with Matern-5/2 correlation."""
    rng = np.random.default_rng(rng)
    R = matern52(dist, length_scale)
    # small jitter; smooth kernels are numerically near singular
    L = np.linalg.cholesky(R + 1e-9 * np.eye(R.shape[0]))
    shape = (R.shape[0],) if size is None else (size, R.shape[0])
    return rng.standard_normal(shape) @ L.T


# -- simulation ---------------------------------------------------------------


@dataclass
class SimScenario:
    """One simulation setting: ``log theta = beta x + M L + u``."""

    graph: AdjacencyGraph
    E: np.ndarray
    labels: np.ndarray
    coords: np.ndarray
    M: float = 1.0
    beta: float = 0.1
    S: int = 50
    target_corr: float = 0.5
    length_scale: float | None = None

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        self.labels = np.asarray(self.labels)
        n = self.graph.n
        if self.E.shape != (n,) or self.labels.shape != (n,) or len(self.coords) != n:
            raise ValueError("E, labels and coords must have one entry per area")
        if self.M < 0:
            raise ValueError("M must be non-negative")
        if self.length_scale is None:
            self.length_scale = calibrate_range(great_circle(self.coords), self.target_corr)

    @classmethod
    def washington(cls, cancer="larynx", M=1.0, S=50, counties=None, **kw) -> "SimScenario":
        """Scenario on the bundled fixture (all 39 counties by default)."""
        if counties is None:
            g, idx = washington_counties(), np.arange(39)
        else:
            g, idx = washington_subgraph(counties)
        return cls(g, expected_count_fixture(cancer, idx), _align_labels(washington_labels(), g),
                   washington_centroids()[idx], M=M, S=S, **kw)


@dataclass
class SimReplicate:
    data: ArealDataset
    theta: np.ndarray
    x: np.ndarray
    u: np.ndarray


def simulate_counts(scenario: SimScenario, rng=None) -> list[SimReplicate]:
    """Draw ``S`` replicates; ``x`` and ``u`` are independent Matern fields."""
    rng = np.random.default_rng(rng)
    dist = great_circle(scenario.coords)
    out = []
    for _ in range(scenario.S):
        x = matern_field(dist, scenario.length_scale, rng)
        u = matern_field(dist, scenario.length_scale, rng)
        theta = np.exp(scenario.beta * x + scenario.M * scenario.labels + u)
        y = rng.poisson(scenario.E * theta).astype(float)
        out.append(SimReplicate(ArealDataset(scenario.graph, y, scenario.E, x[:, None]),
                                theta, x, u))
    return out


def simulate_separable(graph: AdjacencyGraph, E, M, K_R, K_C, rng=None):
    """Counts from the multivariate model with given precisions.

    Returns ``(Y, U)``.
    """
    from .model_multi import sample_matnorm
    rng = np.random.default_rng(rng)
    U = sample_matnorm(M, K_R, K_C, rng)
    return rng.poisson(np.asarray(E) * np.exp(U)).astype(float), U


# -- metrics ------------------------------------------------------------------


def ramse(theta_true, theta_draws) -> float:
    """Root of the squared error averaged over replicates, draws and areas.

    ``theta_true`` is ``(S, n)``; ``theta_draws`` is ``(S, B, n)`` (or a list
    of ``(B_s, n)`` arrays when chains have different lengths).
    """
    theta_true = np.atleast_2d(np.asarray(theta_true, dtype=float))
    if isinstance(theta_draws, np.ndarray) and theta_draws.ndim == 3:
        theta_draws = list(theta_draws)
    if len(theta_draws) != theta_true.shape[0]:
        raise ValueError("one trace per replicate")
    tot, cnt = 0.0, 0
    for t, draws in zip(theta_true, theta_draws):
        draws = np.asarray(draws, dtype=float)
        if draws.ndim != 2 or draws.shape[1] != t.size:
            raise ValueError("trace shape does not match the truth")
        tot += float(np.sum((draws - t) ** 2))
        cnt += draws.size
    return float(np.sqrt(tot / cnt))


def cv_metrics(y, pred_mean, pred_var) -> tuple[float, float]:
    """Average squared predictive bias and average predictive variance."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("no held-out cells")
    bias2 = float(np.mean((np.asarray(pred_mean, dtype=float).ravel() - y) ** 2))
    return bias2, float(np.mean(np.asarray(pred_var, dtype=float).ravel()))


def effective_params(loglik, y, E, theta_hat) -> tuple[float, float]:
    """``(p_DIC, p_WAIC)`` from pointwise log-likelihood draws.

    ``loglik`` is ``(B, ...)``; cells holding NaN (held out) are ignored.
    ``p_WAIC`` uses the sample variance with ``ddof=1`` (0 for one draw).
    """
    from .model_uni import poisson_loglik
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim < 2 or ll.shape[0] == 0:
        raise ValueError("need a (draws x cells) log-likelihood trace")
    ll = ll.reshape(ll.shape[0], -1)
    keep = ~np.isnan(ll[0])
    ll = ll[:, keep]
    y = np.asarray(y, dtype=float).ravel()[keep]
    E = np.asarray(E, dtype=float).ravel()[keep]
    at_mean = poisson_loglik(y, E, np.log(np.asarray(theta_hat, dtype=float).ravel()[keep]))
    p_dic = 2.0 * (float(at_mean.sum()) - float(ll.sum(axis=1).mean()))
    p_waic = float(ll.var(axis=0, ddof=1).sum()) if ll.shape[0] > 1 else 0.0
    return p_dic, p_waic


@dataclass
class CoverageReport:
    coverage: float
    length: float
    length_low: float | None
    length_high: float | None


def interval_coverage(lower, upper, y, low_max: float = 5, high_min: float = 20) -> CoverageReport:
    """Coverage and mean lengths of given intervals.

    Lengths for the ``y <= low_max`` and ``y >= high_min`` strata are None
    when the stratum is empty.
    """
    lo, hi, y = (np.asarray(a, dtype=float).ravel() for a in (lower, upper, y))
    inside = (lo <= y) & (y <= hi)
    with np.errstate(invalid="ignore"):
        width = hi - lo
    low, high = y <= low_max, y >= high_min
    return CoverageReport(float(inside.mean()), float(width.mean()),
                          float(width[low].mean()) if low.any() else None,
                          float(width[high].mean()) if high.any() else None)


def coverage_report(y_rep, y, level: float = 0.95) -> CoverageReport:
    """Central predictive intervals from ``(B, ...)`` replicate draws."""
    draws = np.asarray(y_rep, dtype=float).reshape(len(y_rep), -1)
    q = 0.5 * (1.0 - level)
    lo, hi = np.quantile(draws, [q, 1.0 - q], axis=0)
    return interval_coverage(lo, hi, y)


@dataclass
class MetricReport:
    """Evaluation summary; fields not computed for a run stay None."""

    ramse: float | None = None
    bias2: float | None = None
    var: float | None = None
    coverage: float | None = None
    length: float | None = None
    length_low: float | None = None
    length_high: float | None = None
    p_dic: float | None = None
    p_waic: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mse(self) -> float | None:
        if self.bias2 is None or self.var is None:
            return None
        return self.bias2 + self.var

    def as_row(self) -> dict:
        row = {k: v for k, v in asdict(self).items() if k != "extra"}
        row["mse"] = self.mse
        row.update(self.extra)
        return row


def write_reports(rows: list[dict], path) -> None:
    """CSV with the union of keys; None is written as an empty field."""
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})


# -- cross-validation ---------------------------------------------------------


def fold_assignment(shape, k: int = 10, seed: int = 0) -> np.ndarray:
    """Random balanced split of all cells into ``k`` folds (labels 0..k-1)."""
    size = int(np.prod(shape))
    if not 1 <= k <= size:
        raise ValueError("need 1 <= k <= number of cells")
    rng = np.random.default_rng(seed)
    folds = np.arange(size) % k
    rng.shuffle(folds)
    return folds.reshape(shape)


def crossval_multivariate(data, prior, table=None, k: int = 10, seed: int = 0,
                          on_fold=None) -> MetricReport:
    """k-fold predictive check of :func:`fit_multivariate`.

    Every cell is held out exactly once; its posterior predictive mean and
    variance enter the average bias and variance.
    """
    from dataclasses import replace

    from .model_multi import fit_multivariate, predictive_moments
    folds = fold_assignment(data.Y.shape, k, seed)
    mean = np.empty(data.Y.shape)
    var = np.empty(data.Y.shape)
    for f in range(k):
        mask = folds == f
        samples = fit_multivariate(data.with_mask(mask), replace(prior, seed=prior.seed + f),
                                   table)
        mu, v = predictive_moments(samples, data.E)
        mean[mask], var[mask] = mu[mask], v[mask]
        if on_fold is not None:
            on_fold(f, samples)
    bias2, v = cv_metrics(data.Y, mean, var)
    return MetricReport(bias2=bias2, var=v, extra={"folds": k})
