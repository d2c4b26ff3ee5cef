"""Multivariate (areas x outcomes) Poisson disease-mapping model with a
separable matrix-normal prior on the log relative risks.

Model::

    y_ic ~ Poisson(E_ic theta_ic),   log Theta = U
    U ~ MN(1 M', K_R^{-1}, K_C^{-1})      (vec U has covariance K_C^{-1} (x) K_R^{-1})
    M_c ~ N(0, sigma2_M)
    K_R ~ TWis_G(delta_R, (delta_R - 2) D(rho))  ("tgw"), its untruncated
          version ("gw"), or K_R = D_w - rho W ("car")
    K_C ~ Wis_{G_C}(delta_C, (delta_C - 2) I), G_C complete, fixed, or uniform
          over all graphs

(K_C)_11 = 1 is imposed when K_R has a free scale ("tgw", "gw"); the CAR
K_R is fully determined by rho, so there K_C stays unrestricted unless
``pin_KC`` says otherwise.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import _kernels as kern
from .cholspace import in_cone, in_restricted_cone
from .graph import AdjacencyGraph
from .model_uni import (PosteriorSamples, poisson_loglik, precision_from_factor,
                        propose_rho, rho_update)
from .spatial import (COARSE_RHO_GRID, RHO_GRID, car_logdet, car_matrix, d_rho_inverse,
                      grid_index)
from .wishfam import (AcceptanceRecord, NormConstTable, TruncGWishartParams, initial_factor,
                      log_normconst_identity)

GC_MODES = ("complete", "fixed", "random")
KR_FLAVORS = ("tgw", "gw", "car")


@dataclass
class MultiDataset:
    """Count and expected-count matrices (areas x outcomes).

    ``mask`` marks held-out cells (True = not used in the likelihood).
    """

    graph: AdjacencyGraph
    Y: np.ndarray
    E: np.ndarray
    mask: np.ndarray | None = None
    outcomes: tuple | None = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        self.E = np.asarray(self.E, dtype=float)
        if self.Y.ndim != 2 or self.Y.shape[0] != self.graph.n:
            raise ValueError(f"Y must be {self.graph.n} x C")
        if self.E.shape != self.Y.shape:
            raise ValueError("E must have the same shape as Y")
        if np.any(self.E <= 0):
            raise ValueError("expected counts must be strictly positive")
        if self.mask is None:
            self.mask = np.zeros(self.Y.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.Y.shape:
            raise ValueError("mask must have the same shape as Y")
        obs = self.Y[~self.mask]
        if np.any(obs < 0) or np.any(obs != np.round(obs)):
            raise ValueError("observed counts must be non-negative integers")
        if self.outcomes is None:
            self.outcomes = tuple(f"outcome{c + 1}" for c in range(self.C))
        if len(self.outcomes) != self.C:
            raise ValueError("one label per outcome column")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def C(self) -> int:
        return self.Y.shape[1]

    def with_mask(self, mask) -> "MultiDataset":
        return MultiDataset(self.graph, self.Y, self.E, mask, self.outcomes)


def read_multi_csv(path, graph: AdjacencyGraph) -> MultiDataset:
    """Long-format CSV ``area_id, outcome, y, E[, holdout]``."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    for need in ("area_id", "outcome", "y", "E"):
        if need not in rows[0]:
            raise ValueError(f"{path}: missing column {need!r}")
    outcomes = []
    for r in rows:
        if r["outcome"] not in outcomes:
            outcomes.append(r["outcome"])
    index = {graph.label_of(i): i for i in range(graph.n)}
    Y = np.full((graph.n, len(outcomes)), np.nan)
    E = np.full_like(Y, np.nan)
    mask = np.zeros(Y.shape, dtype=bool)
    for r in rows:
        aid = r["area_id"].strip()
        if aid not in index:
            raise ValueError(f"{path}: unknown area {aid!r}")
        i, c = index[aid], outcomes.index(r["outcome"])
        Y[i, c], E[i, c] = float(r["y"]), float(r["E"])
        mask[i, c] = r.get("holdout", "0").strip() in ("1", "true", "True")
    if np.any(np.isnan(E)):
        raise ValueError(f"{path}: incomplete area x outcome table")
    return MultiDataset(graph, Y, E, mask, tuple(outcomes))


def write_multi_csv(data: MultiDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id", "outcome", "y", "E", "holdout"])
        for i in range(data.n):
            for c in range(data.C):
                w.writerow([data.graph.label_of(i), data.outcomes[c], int(data.Y[i, c]),
                            repr(float(data.E[i, c])), int(data.mask[i, c])])


def matnorm_loglik(U, M, K_R, K_C) -> float:
    """Matrix-normal log density of ``U`` with row mean ``M'``.

    Uses ``tr(K_R R K_C R')`` and the log-determinants of the two factors, so
    the ``nC x nC`` Kronecker matrix is never formed.
    """
    U = np.asarray(U, dtype=float)
    n, C = U.shape
    M = np.asarray(M, dtype=float).reshape(C)
    if K_R.shape != (n, n) or K_C.shape != (C, C):
        raise ValueError("precision shapes do not match U")
    try:
        ldR = 2.0 * np.log(np.diag(np.linalg.cholesky(K_R))).sum()
        ldC = 2.0 * np.log(np.diag(np.linalg.cholesky(K_C))).sum()
    except np.linalg.LinAlgError:
        raise ValueError("precision matrices must be positive definite") from None
    R = U - M[None, :]
    quad = float(np.sum((K_R @ R) * (R @ K_C)))
    return -0.5 * n * C * math.log(2 * math.pi) + 0.5 * C * ldR + 0.5 * n * ldC - 0.5 * quad


def sample_matnorm(M, K_R, K_C, rng=None, size=None) -> np.ndarray:
    """Draw ``U = 1 M' + Phi_R^{-1} Z Phi_C^{-T}`` with ``Z`` standard normal."""
    rng = np.random.default_rng(rng)
    n, C = K_R.shape[0], K_C.shape[0]
    LR = np.linalg.cholesky(K_R)
    LC = np.linalg.cholesky(K_C)
    shape = (n, C) if size is None else (size, n, C)
    Z = rng.standard_normal(shape)
    # K = L L' so K^{-1} = L^{-T} L^{-1}
    X = np.linalg.solve(LR.T, Z)
    X = np.swapaxes(np.linalg.solve(LC.T, np.swapaxes(X, -1, -2)), -1, -2)
    return X + np.asarray(M, dtype=float)


# -- configuration ------------------------------------------------------------


@dataclass
class MultiPriorConfig:
    """Priors, proposal scales and run settings for :func:`fit_multivariate`.

    ``rho_prior`` is ``"grid"`` (31 values), ``"coarse"`` (0.05, ..., 0.95,
    0.99) or a number giving a fixed value.
    """

    kr_flavor: str = "tgw"
    gc_mode: str = "random"
    gc_graph: AdjacencyGraph | None = None
    delta_R: float = 3.0
    delta_C: float = 3.0
    sigma2_M: float = 100.0
    rho_prior: object = "grid"
    rho_init: float = 0.8
    pin_KR: bool = False
    pin_KC: bool | None = None
    sigma_phi: float = 2.0
    sigma_phi_C: float = 0.5
    sigma_gamma: float = 0.5
    s_u: float = 0.1
    gc_draws: int = 50_000
    n_iter: int = 10_000
    burn: int = 1_000
    thin: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kr_flavor not in KR_FLAVORS:
            raise ValueError(f"kr_flavor must be one of {KR_FLAVORS}")
        if self.gc_mode not in GC_MODES:
            raise ValueError(f"gc_mode must be one of {GC_MODES}")
        if self.gc_mode == "fixed" and self.gc_graph is None:
            raise ValueError("gc_mode 'fixed' needs gc_graph")
        if not (self.delta_R > 2 and self.delta_C > 2):
            raise ValueError("delta_R and delta_C must exceed 2")
        if self.n_iter < 1 or self.burn < 0 or self.thin < 1:
            raise ValueError("need n_iter >= 1, burn >= 0, thin >= 1")

    @property
    def kc_pinned(self) -> bool:
        """Whether ``(K_C)_11 = 1``; by default only when ``K_R`` has a free scale."""
        return self.kr_flavor != "car" if self.pin_KC is None else bool(self.pin_KC)

    def grid(self) -> np.ndarray:
        if isinstance(self.rho_prior, str):
            if self.rho_prior == "grid":
                return RHO_GRID.copy()
            if self.rho_prior == "coarse":
                return COARSE_RHO_GRID.copy()
            raise ValueError(f"unknown rho prior {self.rho_prior!r}")
        return np.array([float(self.rho_prior)])


# -- G_C moves ----------------------------------------------------------------


def _mask_of(adj: np.ndarray) -> int:
    C = adj.shape[0]
    bits = 0
    for k, (i, j) in enumerate(itertools.combinations(range(C), 2)):
        if adj[i, j]:
            bits |= 1 << k
    return bits


class GraphConstantCache:
    """Lazily computed ``log J(G)`` for outcome graphs with ``phi_00 = 1``.

    Each graph is evaluated once with a seed derived from ``seed`` and its
    edge bitmask, so values do not depend on visiting order.
    """

    def __init__(self, C: int, delta: float, scale: float, draws: int, seed: int,
                 fixed_first: bool = True):
        self.C, self.delta, self.scale, self.draws, self.seed = C, delta, scale, draws, seed
        self.fixed_first = fixed_first
        self._cache: dict[int, float] = {}

    def __call__(self, adj: np.ndarray) -> float:
        key = _mask_of(adj)
        if key not in self._cache:
            pairs = list(itertools.combinations(range(self.C), 2))
            g = AdjacencyGraph(self.C, frozenset(p for k, p in enumerate(pairs) if key >> k & 1))
            rng = np.random.default_rng([self.seed, key])
            self._cache[key] = log_normconst_identity(g, self.delta, self.scale, self.draws,
                                                      rng, fixed_first=self.fixed_first)
        return self._cache[key]


def _log_fstar(phi, adj, delta, D) -> float:
    nu = np.triu(adj, 1).sum(axis=1)
    d = np.diag(phi)
    K = phi.T @ phi
    return float(np.sum((delta + nu - 1.0) * np.log(d)) - 0.5 * np.sum(K * D))


def gc_edge_move(phi, adj, delta_post, D_post, log_J, sigma_gamma, rng):
    """Reversible-jump toggle of one uniformly chosen outcome pair.

    Adding edge ``(i, j)`` makes ``phi[i, j]`` free with a normal proposal
    centred at its completed value; removing it re-completes the entry.
    Target: ``f*(phi, G) / J(G)``, where ``f*`` is the full-conditional
    Cholesky-space density (shape ``delta_post``, rate ``D_post``) and ``J``
    the prior constant (``log_J`` callable on adjacency matrices).

    Returns ``(phi, adj, accepted)``; inputs are not modified.
    """
    C = phi.shape[0]
    pairs = list(itertools.combinations(range(C), 2))
    i, j = pairs[rng.integers(len(pairs))]
    new_adj = adj.copy()
    new_adj[i, j] = new_adj[j, i] = not adj[i, j]
    new_phi = phi.copy()
    adding = not adj[i, j]
    if adding:
        centre = phi[i, j]
        new_phi[i, j] = centre + sigma_gamma * rng.standard_normal()
        gamma = new_phi[i, j]
        kern.complete_rows(new_phi, new_adj, i)
    else:
        kern.complete_rows(new_phi, new_adj, i)
        centre, gamma = new_phi[i, j], phi[i, j]
    log_q = (-0.5 * ((gamma - centre) / sigma_gamma) ** 2
             - 0.5 * math.log(2 * math.pi) - math.log(sigma_gamma))
    log_r = (_log_fstar(new_phi, new_adj, delta_post, D_post) - log_J(new_adj)
             - _log_fstar(phi, adj, delta_post, D_post) + log_J(adj))
    log_r += -log_q if adding else log_q
    if math.log(rng.random()) < log_r:
        return new_phi, new_adj, True
    return phi, adj, False


def sample_outcome_graph_prior(C: int, delta_C: float = 3.0, n_iter: int = 100_000,
                               thin: int = 10, sigma_phi: float = 1.0,
                               sigma_gamma: float = 0.5, draws: int = 50_000,
                               rng=None, seed: int = 0):
    """Prior-only chain over ``(K_C, G_C)`` using the sweep and edge move.

    Targets the uniform graph prior times the pinned G-Wishart. Returns the
    stored adjacency matrices ``(m, C, C)`` and the ``K_C`` draws.
    """
    rng = np.random.default_rng(rng)
    kern.seed_rng(int(rng.integers(0, 2**32 - 1)))
    D = (delta_C - 2.0) * np.eye(C)
    log_J = GraphConstantCache(C, delta_C, delta_C - 2.0, draws, seed)
    phi, adj = np.eye(C), np.zeros((C, C), dtype=bool)
    buf = kern.SweepBuffers(C, 8)
    counts = np.zeros(kern.N_COUNTS, np.int64)
    m = n_iter // thin
    graphs = np.empty((m, C, C), dtype=bool)
    Ks = np.empty((m, C, C))
    for it in range(n_iter):
        nu = np.triu(adj, 1).sum(axis=1).astype(float)
        st = kern.mh_sweep(phi, adj, nu, delta_C, D, False, True, sigma_phi, counts, *buf.args())
        if st != kern.OK:
            raise FloatingPointError("outcome precision sampler failed")
        phi, adj, _ = gc_edge_move(phi, adj, delta_C, D, log_J, sigma_gamma, rng)
        if (it + 1) % thin == 0:
            graphs[(it + 1) // thin - 1] = adj
            Ks[(it + 1) // thin - 1] = precision_from_factor(phi, 1.0)
    return graphs, Ks


def edge_inclusion_probs(samples: PosteriorSamples) -> np.ndarray:
    """Posterior frequency of each outcome-graph edge (zero diagonal)."""
    if "gc_edges" not in samples:
        raise ValueError("samples carry no outcome-graph trace (G_C was not random)")
    freq = np.asarray(samples["gc_edges"], dtype=float).mean(axis=0)
    np.fill_diagonal(freq, 0.0)
    return freq


# -- sampler ------------------------------------------------------------------


def fit_multivariate(data: MultiDataset, prior: MultiPriorConfig | None = None,
                     table: NormConstTable | None = None, use_likelihood: bool = True,
                     rng=None, store_K: bool = True, chains: int = 1) -> PosteriorSamples:
    """Run the MCMC sampler for the separable multivariate model.

    Held-out cells (``data.mask``) are left out of the likelihood and drawn
    from the posterior predictive each iteration (trace ``y_rep``).

    Returns
    -------
    PosteriorSamples with traces ``theta, U, M, rho, K_C, loglik, y_rep`` plus
    ``K_R`` (when ``store_K``) and ``gc_edges`` (random outcome graph).
    """
    prior = prior or MultiPriorConfig()
    g = data.graph
    if not g.is_connected():
        raise ValueError("the model needs a connected spatial graph")
    grid = prior.grid()
    if prior.kr_flavor != "car" and grid.size > 1:
        if table is None:
            raise ValueError(f"K_R flavor {prior.kr_flavor!r} needs a normalising-constant "
                             "table (build one with the normconst command)")
        ff = float(g.degrees()[0]) if prior.pin_KR else None
        table.check_matches(g, prior.delta_R, prior.kr_flavor == "tgw", ff)
        if table.grid.size != grid.size or not np.allclose(table.grid, grid):
            raise ValueError("table grid differs from the model grid")
    if prior.gc_mode == "fixed" and prior.gc_graph.n != data.C:
        raise ValueError("gc_graph size differs from the number of outcomes")
    entropy = prior.seed if rng is None else (
        int(rng.integers(0, 2**63 - 1)) if isinstance(rng, np.random.Generator) else int(rng))
    seeds = np.random.SeedSequence(entropy).spawn(chains)
    parts = [_run_chain(data, prior, table, use_likelihood, grid,
                        np.random.default_rng(s), store_K) for s in seeds]
    return parts[0] if chains == 1 else PosteriorSamples.concat(parts)


def _run_chain(data, prior, table, use_lik, grid, rng, store_K):
    g, n, C = data.graph, data.n, data.C
    Y, E = data.Y.copy(), data.E
    observed = ~data.mask
    Y[data.mask] = 0.0
    dR, dC = prior.delta_R, prior.delta_C
    flavor = prior.kr_flavor
    truncated = flavor == "tgw"
    w1 = float(g.degrees()[0]) if prior.pin_KR else None
    t0 = time.perf_counter()
    kern.seed_rng(int(rng.integers(0, 2**32 - 1)))

    k_rho = grid_index(grid, prior.rho_init) if grid.size > 1 else 0
    if flavor == "car":
        car_mats = [car_matrix(g, r) for r in grid]
        logdets = np.array([car_logdet(g, r) for r in grid])
        K_R = car_mats[k_rho]
    else:
        D_scaled = [(dR - 2.0) * d_rho_inverse(g, r) for r in grid]
        log_norm = table.log_norm() if grid.size > 1 else np.zeros(1)
        pR = TruncGWishartParams(g, dR, D_scaled[k_rho], truncated, w1)
        phiR = initial_factor(pR).phi.copy()
        K_R = precision_from_factor(phiR, w1)
        adjR, nuR = g.adjacency(), pR.nu
        bufR = kern.SweepBuffers(n)
        countsR = np.zeros(kern.N_COUNTS, np.int64)

    if prior.gc_mode == "complete" or C == 1:
        adjC = ~np.eye(C, dtype=bool)
    elif prior.gc_mode == "fixed":
        adjC = prior.gc_graph.adjacency()
    else:
        adjC = np.zeros((C, C), dtype=bool)
    D_C = (dC - 2.0) * np.eye(C)
    phiC = np.eye(C)
    bufC = kern.SweepBuffers(C, 8)
    countsC = np.zeros(kern.N_COUNTS, np.int64)
    pin_C = prior.kc_pinned
    log_J = GraphConstantCache(C, dC, dC - 2.0, prior.gc_draws, prior.seed, pin_C)
    K_C = phiC.T @ phiC

    U = np.zeros((n, C))
    if use_lik:
        U = np.log((Y + 0.5) / E)
        for c in range(C):
            # held-out cells start at the observed column mean
            obs_c = observed[:, c]
            U[~obs_c, c] = U[obs_c, c].mean() if obs_c.any() else 0.0
    M = U.mean(axis=0)

    m = prior.n_iter // prior.thin
    tr = {"theta": np.empty((m, n, C)), "U": np.empty((m, n, C)), "M": np.empty((m, C)),
          "rho": np.empty(m), "K_C": np.empty((m, C, C)), "loglik": np.empty((m, n, C)),
          "y_rep": np.empty((m, n, C))}
    if store_K:
        tr["K_R"] = np.empty((m, n, n))
    if prior.gc_mode == "random" and C > 1:
        tr["gc_edges"] = np.empty((m, C, C), dtype=bool)
    acc_u = acc_rho = acc_gc = 0
    cone_checks = cone_fail = 0
    kc_pinned = True
    ones = np.ones(n)
    total = prior.burn + prior.n_iter
    for it in range(total):
        R = U - M[None, :]
        A = K_R @ R @ K_C
        acc_u += kern.U_sweep(U, Y, E, observed, K_R, K_C, A, prior.s_u, use_lik)

        s1 = float(ones @ K_R @ ones)
        P = s1 * K_C + np.eye(C) / prior.sigma2_M
        bvec = K_C @ (U.T @ (K_R @ ones))
        LP = np.linalg.cholesky(P)
        mean = np.linalg.solve(P, bvec)
        M = mean + np.linalg.solve(LP.T, rng.standard_normal(C))
        R = U - M[None, :]

        if flavor == "car":
            if grid.size > 1:
                S = R @ K_C @ R.T
                kp, log_q = propose_rho(k_rho, grid.size, rng)
                if kp != k_rho:
                    log_r = (0.5 * C * (logdets[kp] - logdets[k_rho])
                             - 0.5 * float(np.sum((car_mats[kp] - car_mats[k_rho]) * S)) + log_q)
                    if math.log(rng.random()) < log_r:
                        k_rho = kp
                        acc_rho += 1
                K_R = car_mats[k_rho]
        else:
            D_post = D_scaled[k_rho] + R @ K_C @ R.T
            st = kern.mh_sweep(phiR, adjR, nuR, dR + C, D_post, truncated, w1 is not None,
                               prior.sigma_phi, countsR, *bufR.args())
            if st != kern.OK:
                raise FloatingPointError("spatial precision sampler left the supported cone")
            K_R = precision_from_factor(phiR, w1)
            if grid.size > 1:
                k_rho, ok = rho_update(k_rho, K_R, D_scaled, log_norm, rng)
                acc_rho += ok

        if C > 1 or not pin_C:
            DC_post = D_C + R.T @ K_R @ R
            nuC = np.triu(adjC, 1).sum(axis=1).astype(float)
            st = kern.mh_sweep(phiC, adjC, nuC, dC + n, DC_post, False, pin_C,
                               prior.sigma_phi_C, countsC, *bufC.args())
            if st != kern.OK:
                raise FloatingPointError("outcome precision sampler failed")
            if prior.gc_mode == "random":
                phiC, adjC, ok = gc_edge_move(phiC, adjC, dC + n, DC_post, log_J,
                                              prior.sigma_gamma, rng)
                acc_gc += ok
            K_C = precision_from_factor(phiC, 1.0) if pin_C else phiC.T @ phiC

        if it >= prior.burn and (it - prior.burn + 1) % prior.thin == 0:
            s = (it - prior.burn) // prior.thin
            tr["theta"][s] = np.exp(U)
            tr["U"][s] = U
            tr["M"][s] = M
            tr["rho"][s] = grid[k_rho]
            tr["K_C"][s] = K_C
            ll = poisson_loglik(Y, E, U)
            ll[~observed] = np.nan
            tr["loglik"][s] = ll
            tr["y_rep"][s] = rng.poisson(E * np.exp(U))
            if store_K:
                tr["K_R"][s] = K_R
            if "gc_edges" in tr:
                tr["gc_edges"][s] = adjC
            cone_checks += 1
            okR = True
            if flavor != "car":
                okR = in_restricted_cone(K_R, g) if truncated else in_cone(K_R, g)
            gC = AdjacencyGraph(C, frozenset(zip(*np.nonzero(np.triu(adjC, 1)))))
            cone_fail += (not okR) or (not in_cone(K_C, gC))
            if pin_C:
                kc_pinned &= K_C[0, 0] == 1.0
            if w1 is not None:
                kc_pinned &= K_R[0, 0] == w1

    acceptance = {"U": acc_u / (total * n * C), "rho": acc_rho / total}
    if flavor != "car":
        acceptance["phi_R"] = float(AcceptanceRecord(countsR).rate)
    if C > 1 or not pin_C:
        acceptance["phi_C"] = float(AcceptanceRecord(countsC).rate)
    if prior.gc_mode == "random" and C > 1:
        acceptance["gc"] = acc_gc / total
    diagnostics = {"cone_checks": cone_checks, "cone_failures": cone_fail,
                   "k11_exact": bool(kc_pinned), "seconds": time.perf_counter() - t0}
    return PosteriorSamples(tr, np.zeros(m, dtype=int), acceptance, diagnostics)


def predictive_moments(samples: PosteriorSamples, E) -> tuple[np.ndarray, np.ndarray]:
    """Posterior predictive mean and variance of every count.

    Rao-Blackwellised over the Poisson layer: ``mean = E[E theta]`` and
    ``var = E[E theta] + var(E theta)``.
    """
    mu = np.asarray(E)[None] * samples["theta"]
    return mu.mean(axis=0), mu.mean(axis=0) + mu.var(axis=0)


# -- estimator ----------------------------------------------------------------


class MultivariateDiseaseMap(BaseEstimator):
    """Estimator wrapping :func:`fit_multivariate`.

    ``fit(Y, E, mask=None)``; ``predict()`` returns posterior predictive mean
    counts for every area x outcome cell (held-out cells included).
    """

    def __init__(self, graph=None, kr_flavor="tgw", gc_mode="random", table=None,
                 delta_R=3.0, delta_C=3.0, sigma2_M=100.0, rho_prior="grid", n_iter=10_000,
                 burn=1_000, thin=10, seed=0):
        self.graph = graph
        self.kr_flavor = kr_flavor
        self.gc_mode = gc_mode
        self.table = table
        self.delta_R = delta_R
        self.delta_C = delta_C
        self.sigma2_M = sigma2_M
        self.rho_prior = rho_prior
        self.n_iter = n_iter
        self.burn = burn
        self.thin = thin
        self.seed = seed

    def fit(self, Y, E, mask=None):
        if self.graph is None:
            raise ValueError("graph must be set before fitting")
        Y = check_array(Y, ensure_all_finite="allow-nan")
        E = check_array(E)
        data = MultiDataset(self.graph, Y, E, mask)
        prior = MultiPriorConfig(kr_flavor=self.kr_flavor, gc_mode=self.gc_mode,
                                 delta_R=self.delta_R, delta_C=self.delta_C,
                                 sigma2_M=self.sigma2_M, rho_prior=self.rho_prior,
                                 n_iter=self.n_iter, burn=self.burn, thin=self.thin,
                                 seed=self.seed)
        self.samples_ = fit_multivariate(data, prior, self.table)
        self.E_ = E
        self.n_features_in_ = Y.shape[1]
        return self

    def predict(self, X=None):
        check_is_fitted(self, "samples_")
        return predictive_moments(self.samples_, self.E_)[0]

    def edge_inclusion(self):
        check_is_fitted(self, "samples_")
        return edge_inclusion_probs(self.samples_)

