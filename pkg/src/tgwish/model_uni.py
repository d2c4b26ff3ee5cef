"""Univariate Poisson disease-mapping model with a graph-structured precision
prior on the area random effects.

Model::

    y_i ~ Poisson(E_i theta_i),   log theta_i = x_i' beta + u_i
    u | alpha, tau2, K ~ N(alpha 1, (tau2 K)^{-1})
    alpha ~ N(0, sigma2_alpha),   beta ~ N(0, sigma2_beta I),   tau2 ~ Gamma(a, rate=b)
    K ~ TWis_G(delta, (delta - 2) D(rho)) with K_11 = W_1+   ("tgw")
        Wis_G(...) with the same pinning                     ("gw")
        K = D_w - rho W                                     ("car")
    rho ~ uniform on the discrete grid
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import _kernels as kern
from .cholspace import CholeskyFactor, in_cone, in_restricted_cone
from .graph import AdjacencyGraph
from .spatial import RHO_GRID, car_logdet, car_matrix, d_rho_inverse, grid_index
from .wishfam import AcceptanceRecord, NormConstTable, TruncGWishartParams, initial_factor

FLAVORS = ("tgw", "gw", "car")


# -- data ---------------------------------------------------------------------


@dataclass
class ArealDataset:
    """Counts, expected counts and optional covariates over a graph's areas."""

    graph: AdjacencyGraph
    y: np.ndarray
    E: np.ndarray
    X: np.ndarray | None = None

    def __post_init__(self):
        n = self.graph.n
        self.y = np.asarray(self.y, dtype=float)
        self.E = np.asarray(self.E, dtype=float)
        if self.y.shape != (n,) or self.E.shape != (n,):
            raise ValueError(f"y and E must have length {n}")
        if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
            raise ValueError("counts must be non-negative integers")
        if np.any(self.E <= 0):
            raise ValueError("expected counts must be strictly positive")
        if self.X is None:
            self.X = np.zeros((n, 0))
        self.X = np.asarray(self.X, dtype=float).reshape(n, -1)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def sir(self) -> np.ndarray:
        return self.y / self.E


def expected_counts(populations, counts=None, rates=None) -> np.ndarray:
    """Expected counts ``E_i = sum_j q_j P_ij`` from stratum populations.

    Internal standardisation (``counts`` given, shape ``(n, J)``) estimates
    ``q_j = sum_i y_ij / sum_i P_ij``; external standardisation uses ``rates``.
    """
    P = np.atleast_2d(np.asarray(populations, dtype=float))
    if P.shape[0] == 1 and np.ndim(populations) == 1:
        P = P.T
    if np.any(P < 0):
        raise ValueError("populations must be non-negative")
    if (counts is None) == (rates is None):
        raise ValueError("give exactly one of counts (internal) or rates (external)")
    if rates is not None:
        q = np.broadcast_to(np.asarray(rates, dtype=float), (P.shape[1],))
    else:
        Y = np.asarray(counts, dtype=float).reshape(P.shape)
        tot = P.sum(axis=0)
        if np.any(tot <= 0):
            raise ValueError("a stratum has zero total population")
        q = Y.sum(axis=0) / tot
    return P @ q


def read_areal_csv(path, graph: AdjacencyGraph) -> ArealDataset:
    """CSV with columns ``area_id, y, E`` and optional covariate columns."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    cols = list(rows[0].keys())
    for need in ("area_id", "y", "E"):
        if need not in cols:
            raise ValueError(f"{path}: missing column {need!r}")
    covs = [c for c in cols if c not in ("area_id", "y", "E")]
    index = {graph.label_of(i): i for i in range(graph.n)}
    y, E = np.full(graph.n, np.nan), np.full(graph.n, np.nan)
    X = np.zeros((graph.n, len(covs)))
    for r in rows:
        aid = r["area_id"].strip()
        if aid not in index:
            raise ValueError(f"{path}: unknown area {aid!r}")
        i = index[aid]
        y[i], E[i] = float(r["y"]), float(r["E"])
        X[i] = [float(r[c]) for c in covs]
    if np.any(np.isnan(y)):
        missing = [graph.label_of(i) for i in np.flatnonzero(np.isnan(y))]
        raise ValueError(f"{path}: no row for areas {missing[:5]}")
    return ArealDataset(graph, y, E, X if covs else None)


def write_areal_csv(data: ArealDataset, path) -> None:
    covs = [f"x{k + 1}" for k in range(data.X.shape[1])]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id", "y", "E", *covs])
        for i in range(data.n):
            w.writerow([data.graph.label_of(i), int(data.y[i]), repr(float(data.E[i])),
                        *[repr(float(v)) for v in data.X[i]]])


def read_strata_csv(path, graph: AdjacencyGraph):
    """Strata CSV ``area_id, stratum, population[, count]``.

    Returns ``(P, Y, strata)`` with ``Y`` None when no count column exists.
    """
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    strata = sorted({r["stratum"] for r in rows})
    sidx = {s: k for k, s in enumerate(strata)}
    index = {graph.label_of(i): i for i in range(graph.n)}
    has_counts = bool(rows) and "count" in rows[0]
    P = np.zeros((graph.n, len(strata)))
    Y = np.zeros_like(P) if has_counts else None
    for r in rows:
        i, j = index[r["area_id"].strip()], sidx[r["stratum"]]
        P[i, j] = float(r["population"])
        if has_counts:
            Y[i, j] = float(r["count"])
    return P, Y, strata


# -- configuration and output -------------------------------------------------


@dataclass
class UniPriorConfig:
    """Priors, proposal scales and run lengths for :func:`fit_univariate`."""

    sigma2_alpha: float = 1.0
    sigma2_beta: float = 100.0
    a: float = 0.5
    b: float = 0.0015
    delta: float = 3.0
    sigma_phi: float = 2.0
    s_u: float = 0.1
    s_beta: float = 0.05
    n_iter: int = 10_000
    burn: int = 1_000
    thin: int = 10
    seed: int = 0
    rho_init: float = 0.8
    rho_fixed: float | None = None

    def __post_init__(self):
        if not self.delta > 2:
            raise ValueError("delta must exceed 2")
        for name in ("sigma2_alpha", "sigma2_beta", "a", "b", "sigma_phi", "s_u", "s_beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_iter < 1 or self.burn < 0 or self.thin < 1:
            raise ValueError("need n_iter >= 1, burn >= 0, thin >= 1")


@dataclass
class PosteriorSamples:
    """Thinned MCMC traces keyed by parameter block.

    ``traces[name]`` has the draw index first. ``chain`` labels each draw.
    """

    traces: dict
    chain: np.ndarray
    acceptance: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.traces[name]

    def __contains__(self, name):
        return name in self.traces

    @property
    def n_draws(self) -> int:
        return int(self.chain.size)

    @classmethod
    def concat(cls, parts: list["PosteriorSamples"]) -> "PosteriorSamples":
        names = parts[0].traces.keys()
        traces = {k: np.concatenate([p.traces[k] for p in parts]) for k in names}
        chain = np.concatenate([np.full(p.n_draws, c) for c, p in enumerate(parts)])
        acc = {k: float(np.mean([p.acceptance[k] for p in parts])) for k in parts[0].acceptance}
        diag = {}
        for k, v in parts[0].diagnostics.items():
            vals = [p.diagnostics[k] for p in parts]
            if isinstance(v, bool):
                diag[k] = all(vals)
            elif isinstance(v, (int, float)):
                diag[k] = sum(vals) if isinstance(v, int) else float(np.mean(vals))
            else:
                diag[k] = vals
        return cls(traces, chain, acc, diag)

    def summary(self, names=None) -> list[dict]:
        """Mean, sd and quantiles for every scalar component."""
        rows = []
        for name in names or self.traces:
            arr = np.asarray(self.traces[name], dtype=float)
            flat = arr.reshape(arr.shape[0], -1)
            for k in range(flat.shape[1]):
                col = flat[:, k]
                idx = np.unravel_index(k, arr.shape[1:]) if arr.ndim > 1 else ()
                label = name + "".join(f"[{i + 1}]" for i in idx)
                q = np.quantile(col, [0.025, 0.5, 0.975])
                rows.append({"parameter": label, "mean": col.mean(), "sd": col.std(ddof=1) if col.size > 1 else 0.0,
                             "q2.5": q[0], "q50": q[1], "q97.5": q[2]})
        return rows

    def write_summary(self, path, names=None) -> None:
        rows = self.summary(names)
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})

    def write_traces(self, directory, names=None) -> list[Path]:
        """One CSV per block: a ``chain`` column then flattened components."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for name in names or self.traces:
            arr = np.asarray(self.traces[name], dtype=float)
            flat = arr.reshape(arr.shape[0], -1)
            path = directory / f"trace_{name}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["chain"] + [f"{name}_{k + 1}" for k in range(flat.shape[1])])
                for c, row in zip(self.chain, flat):
                    w.writerow([int(c)] + [f"{v:.10g}" for v in row])
            out.append(path)
        return out


# -- conditional updates ------------------------------------------------------


def poisson_loglik(y, E, log_theta):
    """Pointwise Poisson log-likelihood."""
    mu = E * np.exp(log_theta)
    return y * np.log(E) + y * log_theta - mu - special.gammaln(y + 1)


def propose_rho(k: int, m: int, rng) -> tuple[int, float]:
    """Neighbouring grid index and the log Hastings correction.

    Interior points move left or right with probability 1/2; an endpoint moves
    to its only neighbour with probability 1. The correction is
    ``log q(k | k') - log q(k' | k)``.
    """
    if m < 2:
        return k, 0.0
    if k == 0:
        kp = 1
    elif k == m - 1:
        kp = m - 2
    else:
        kp = k + (1 if rng.random() < 0.5 else -1)
    q_fwd = 1.0 if k in (0, m - 1) else 0.5
    q_back = 1.0 if kp in (0, m - 1) else 0.5
    return kp, math.log(q_back) - math.log(q_fwd)


def rho_update(k: int, K, D_scaled, log_norm, rng) -> tuple[int, bool]:
    """Metropolis-Hastings move of the grid index for a Wishart-type prior.

    Parameters
    ----------
    k : int
        Current grid index.
    K : ndarray
        Current precision matrix.
    D_scaled : sequence of ndarray
        Rate matrices ``(delta - 2) D(rho_j)`` for every grid value.
    log_norm : ndarray
        ``log I(rho_j)`` up to a common constant (``NormConstTable.log_norm``).

    Returns
    -------
    (new index, accepted)
    """
    kp, log_q = propose_rho(k, len(D_scaled), rng)
    if kp == k:
        return k, False
    log_r = (-0.5 * float(np.sum(K * (D_scaled[kp] - D_scaled[k])))
             + log_norm[k] - log_norm[kp] + log_q)
    if math.log(rng.random()) < log_r:
        return kp, True
    return k, False


def rho_update_car(k: int, r, tau2: float, car_mats, logdets, rng) -> tuple[int, bool]:
    """Grid move when ``K = D_w - rho W`` is tied to ``rho``."""
    kp, log_q = propose_rho(k, len(car_mats), rng)
    if kp == k:
        return k, False
    log_r = (0.5 * (logdets[kp] - logdets[k])
             - 0.5 * tau2 * float(r @ (car_mats[kp] - car_mats[k]) @ r) + log_q)
    if math.log(rng.random()) < log_r:
        return kp, True
    return k, False


def precision_from_factor(phi: np.ndarray, pinned: float | None = None) -> np.ndarray:
    """``phi' phi`` with ``K[0, 0]`` set to the pinned value when given.

    The pinned entry is a fixed parameter; squaring its root would only add
    rounding noise.
    """
    K = phi.T @ phi
    if pinned is not None:
        K[0, 0] = pinned
    return K


# -- sampler ------------------------------------------------------------------


def _resolve_grid(prior: UniPriorConfig, grid):
    grid = np.asarray(RHO_GRID if grid is None else grid, dtype=float)
    if prior.rho_fixed is not None:
        grid = np.array([prior.rho_fixed])
    return grid


def fit_univariate(data: ArealDataset, prior: UniPriorConfig | None = None,
                   table: NormConstTable | None = None, flavor: str = "tgw",
                   use_likelihood: bool = True, grid=None, rng=None,
                   store_K: bool = True, chains: int = 1) -> PosteriorSamples:
    """Run the MCMC sampler for the univariate model.

    Parameters
    ----------
    data : ArealDataset
    prior : UniPriorConfig
    table : NormConstTable
        Needed for the ``tgw`` and ``gw`` flavors unless ``rho`` is fixed;
        must be built for the same graph, shape, truncation and pinning.
    flavor : {"tgw", "gw", "car"}
    use_likelihood : bool
        False samples from the prior (diagnostic hook).
    grid : array_like, optional
        Autocorrelation grid; defaults to the 31-value grid.
    rng : int or Generator, optional
        Overrides ``prior.seed``.
    chains : int
        Independent chains, concatenated in the result.

    Returns
    -------
    PosteriorSamples with traces ``theta, u, alpha, beta, tau2, rho, loglik,
    y_rep`` (and ``K`` when ``store_K``).
    """
    prior = prior or UniPriorConfig()
    if flavor not in FLAVORS:
        raise ValueError(f"flavor must be one of {FLAVORS}")
    g = data.graph
    if not g.is_connected():
        raise ValueError("the model needs a connected adjacency graph")
    grid = _resolve_grid(prior, grid)
    if flavor != "car" and grid.size > 1:
        if table is None:
            raise ValueError(f"flavor {flavor!r} needs a normalising-constant table "
                             "(build one with the normconst command)")
        table.check_matches(g, prior.delta, flavor == "tgw", float(g.degrees()[0]))
        if table.grid.size != grid.size or not np.allclose(table.grid, grid):
            raise ValueError("table grid differs from the model grid")
    seeds = np.random.SeedSequence(prior.seed if rng is None else _entropy(rng)).spawn(chains)
    parts = [_run_chain(data, prior, table, flavor, use_likelihood, grid,
                        np.random.default_rng(s), store_K) for s in seeds]
    return parts[0] if chains == 1 else PosteriorSamples.concat(parts)


def _entropy(rng):
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    return int(rng)


def _run_chain(data, prior, table, flavor, use_lik, grid, rng, store_K):
    g, n, p = data.graph, data.n, data.X.shape[1]
    y, E, X = data.y, data.E, data.X
    delta = prior.delta
    w1 = float(g.degrees()[0])
    truncated = flavor == "tgw"
    t0 = time.perf_counter()

    k_rho = grid_index(grid, prior.rho_init) if prior.rho_fixed is None else 0
    if flavor == "car":
        car_mats = [car_matrix(g, r) for r in grid]
        logdets = np.array([car_logdet(g, r) for r in grid])
        K = car_mats[k_rho]
    else:
        D_scaled = [(delta - 2.0) * d_rho_inverse(g, r) for r in grid]
        log_norm = table.log_norm() if grid.size > 1 else np.zeros(1)
        p0 = TruncGWishartParams(g, delta, D_scaled[k_rho], truncated, w1)
        phi = initial_factor(p0).phi.copy()
        K = precision_from_factor(phi, w1)
        adj = g.adjacency()
        nu = p0.nu
        bufs = kern.SweepBuffers(n)
        counts = np.zeros(kern.N_COUNTS, np.int64)

    u = np.log((y + 0.5) / E) if use_lik else np.zeros(n)
    alpha = float(u.mean())
    beta = np.zeros(p)
    tau2 = 1.0
    kern.seed_rng(int(rng.integers(0, 2**32 - 1)))

    m = prior.n_iter // prior.thin
    tr = {"theta": np.empty((m, n)), "u": np.empty((m, n)), "alpha": np.empty(m),
          "beta": np.empty((m, p)), "tau2": np.empty(m), "rho": np.empty(m),
          "loglik": np.empty((m, n)), "y_rep": np.empty((m, n))}
    if store_K:
        tr["K"] = np.empty((m, n, n))
    acc_u = acc_beta = acc_rho = 0
    cone_checks = cone_fail = 0
    k11_exact = True
    ones = np.ones(n)
    total = prior.burn + prior.n_iter
    for it in range(total):
        if use_lik:
            offset = X @ beta
            Kr = K @ (u - alpha)
            acc_u += kern.u_sweep(u, offset, y, E, K, Kr, tau2, prior.s_u, use_lik)
            K1 = K @ ones
            prec = 1.0 / prior.sigma2_alpha + tau2 * float(ones @ K1)
            alpha = rng.normal(tau2 * float(K1 @ u) / prec, 1.0 / math.sqrt(prec))
        else:
            # without data (alpha, u) has a closed-form joint conditional
            alpha = rng.normal(0.0, math.sqrt(prior.sigma2_alpha))
            L = np.linalg.cholesky(tau2 * K)
            u = alpha + np.linalg.solve(L.T, rng.standard_normal(n))
            acc_u += n

        r = u - alpha
        Kr = K @ r
        tau2 = rng.gamma(prior.a + 0.5 * n, 1.0 / (prior.b + 0.5 * float(r @ Kr)))

        if p:
            prop = beta + prior.s_beta * rng.standard_normal(p)
            log_r = -0.5 * (prop @ prop - beta @ beta) / prior.sigma2_beta
            if use_lik:
                eta, eta_p = X @ beta + u, X @ prop + u
                log_r += float(y @ (eta_p - eta) - E @ (np.exp(eta_p) - np.exp(eta)))
            if math.log(rng.random()) < log_r:
                beta = prop
                acc_beta += 1

        if flavor == "car":
            if grid.size > 1:
                k_rho, ok = rho_update_car(k_rho, r, tau2, car_mats, logdets, rng)
                acc_rho += ok
                K = car_mats[k_rho]
        else:
            D_post = D_scaled[k_rho] + tau2 * np.outer(r, r)
            st = kern.mh_sweep(phi, adj, nu, delta + 1.0, D_post, truncated, True,
                               prior.sigma_phi, counts, *bufs.args())
            if st != kern.OK:
                raise FloatingPointError("precision sampler left the supported cone")
            K = precision_from_factor(phi, w1)
            if grid.size > 1:
                k_rho, ok = rho_update(k_rho, K, D_scaled, log_norm, rng)
                acc_rho += ok

        if it >= prior.burn and (it - prior.burn + 1) % prior.thin == 0:
            s = (it - prior.burn) // prior.thin
            log_theta = X @ beta + u
            with np.errstate(over="ignore"):
                tr["theta"][s] = np.exp(log_theta)
            tr["u"][s] = u
            tr["alpha"][s] = alpha
            tr["beta"][s] = beta
            tr["tau2"][s] = tau2
            tr["rho"][s] = grid[k_rho]
            if use_lik:
                tr["loglik"][s] = poisson_loglik(y, E, log_theta)
                tr["y_rep"][s] = rng.poisson(E * np.exp(log_theta))
            else:
                # prior draws of u can overflow the Poisson sampler
                tr["loglik"][s] = tr["y_rep"][s] = np.nan
            if store_K:
                tr["K"][s] = K
            if flavor != "car":
                cone_checks += 1
                ok = in_restricted_cone(K, g) if truncated else in_cone(K, g)
                cone_fail += not ok
                k11_exact &= K[0, 0] == w1

    acceptance = {"u": acc_u / (total * n), "rho": acc_rho / total}
    if p:
        acceptance["beta"] = acc_beta / total
    if flavor != "car":
        rec = AcceptanceRecord(counts)
        acceptance["phi_diag"] = float(rec.diag_rate)
        acceptance["phi_offdiag"] = float(rec.offdiag_rate)
    diagnostics = {"cone_checks": cone_checks, "cone_failures": cone_fail,
                   "k11_exact": bool(k11_exact), "seconds": time.perf_counter() - t0}
    return PosteriorSamples(tr, np.zeros(m, dtype=int), acceptance, diagnostics)


# -- estimator ----------------------------------------------------------------


class SpatialPoissonRegressor(BaseEstimator):
    """Disease-mapping estimator wrapping :func:`fit_univariate`.

    ``fit(X, y, E=...)`` takes one row per area of ``graph`` (``X`` may have
    zero columns). ``predict(X)`` returns posterior-mean relative risks
    ``exp(x' beta + u)`` for the fitted areas under covariates ``X``.
    """

    def __init__(self, graph=None, flavor="tgw", table=None, delta=3.0, sigma2_alpha=1.0,
                 sigma2_beta=100.0, a=0.5, b=0.0015, n_iter=10_000, burn=1_000, thin=10,
                 sigma_phi=2.0, s_u=0.1, s_beta=0.05, rho_fixed=None, seed=0):
        self.graph = graph
        self.flavor = flavor
        self.table = table
        self.delta = delta
        self.sigma2_alpha = sigma2_alpha
        self.sigma2_beta = sigma2_beta
        self.a = a
        self.b = b
        self.n_iter = n_iter
        self.burn = burn
        self.thin = thin
        self.sigma_phi = sigma_phi
        self.s_u = s_u
        self.s_beta = s_beta
        self.rho_fixed = rho_fixed
        self.seed = seed

    def _prior(self):
        return UniPriorConfig(self.sigma2_alpha, self.sigma2_beta, self.a, self.b, self.delta,
                              self.sigma_phi, self.s_u, self.s_beta, self.n_iter, self.burn,
                              self.thin, self.seed, rho_fixed=self.rho_fixed)

    def fit(self, X, y, E=None):
        if self.graph is None:
            raise ValueError("graph must be set before fitting")
        n = self.graph.n
        X = check_array(X, ensure_min_features=0) if np.size(X) else np.zeros((n, 0))
        y = check_array(np.asarray(y, dtype=float).reshape(-1, 1)).ravel()
        if E is None:
            raise ValueError("expected counts E are required")
        data = ArealDataset(self.graph, y, np.asarray(E, dtype=float), X)
        self.samples_ = fit_univariate(data, self._prior(), self.table, self.flavor)
        self.n_features_in_ = data.X.shape[1]
        self.relative_risk_ = self.samples_["theta"].mean(axis=0)
        return self

    def predict(self, X=None):
        check_is_fitted(self, "samples_")
        if X is None or not np.size(X):
            return self.relative_risk_
        X = check_array(X, ensure_min_features=0)
        eta = self.samples_["beta"] @ X.T + self.samples_["u"]
        return np.exp(eta).mean(axis=0)


def prior_config_dict(prior: UniPriorConfig) -> dict:
    return asdict(prior)
