"""G-Wishart and truncated G-Wishart densities, samplers and normalising
constant ratios.

The (truncated) G-Wishart density with shape ``delta`` and rate matrix ``D``
is proportional to ``|K|^((delta-2)/2) exp(-<K, D>/2)`` on ``cone+(G)``
(intersected with negative edge entries when truncated). Its mode is
``(delta - 2) D^{-1}``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from . import _kernels as kern
from .cholspace import (CholeskyFactor, InfeasibleStateError, complete_nonfree,
                        in_cone, in_restricted_cone)
from .graph import AdjacencyGraph, nu_counts
from .spatial import RHO_GRID, d_rho_inverse

DEFAULT_SIGMA = 2.0


@dataclass(frozen=True, eq=False)
class TruncGWishartParams:
    """Parameters ``(G, delta, D)`` of a (truncated) G-Wishart law.

    Parameters
    ----------
    graph : AdjacencyGraph
    delta : float
        Shape, must exceed 2.
    D : ndarray
        Symmetric positive-definite rate matrix.
    truncated : bool
        Restrict to negative off-diagonal entries on the edges.
    fixed_first : float, optional
        Pin ``K[0, 0]`` to this value; the sampler then skips ``phi[0, 0]``.
    """

    graph: AdjacencyGraph
    delta: float
    D: np.ndarray
    truncated: bool = True
    fixed_first: float | None = None

    def __post_init__(self):
        D = np.array(self.D, dtype=float)
        n = self.graph.n
        if D.shape != (n, n):
            raise ValueError(f"D is {D.shape}, graph has {n} vertices")
        if not np.allclose(D, D.T, atol=1e-10):
            raise ValueError("D must be symmetric")
        D = 0.5 * (D + D.T)
        if not self.delta > 2:
            raise ValueError(f"delta must exceed 2, got {self.delta}")
        try:
            Dinv = np.linalg.inv(np.linalg.cholesky(D))
        except np.linalg.LinAlgError as exc:
            raise ValueError("D must be positive definite") from exc
        if self.truncated:
            Dinv = Dinv.T @ Dinv
            # zero pattern is only approximate after inversion
            A = self.graph.adjacency()
            Dinv[~(A | np.eye(n, dtype=bool))] = 0.0
            # closure of the restricted cone: rho = 0 gives zero edge entries
            scale = np.sqrt(np.outer(np.diag(Dinv), np.diag(Dinv)))
            if not in_cone(Dinv, self.graph) or np.any(Dinv[A] > 1e-10 * scale[A]):
                raise ValueError("truncated law needs D^{-1} with non-positive edge entries")
        if self.fixed_first is not None and not self.fixed_first > 0:
            raise ValueError("fixed_first must be positive")
        D.setflags(write=False)
        object.__setattr__(self, "D", D)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def nu(self) -> np.ndarray:
        return nu_counts(self.graph).astype(float)

    def mode(self) -> np.ndarray:
        return (self.delta - 2.0) * np.linalg.inv(self.D)

    def with_D(self, D) -> "TruncGWishartParams":
        return TruncGWishartParams(self.graph, self.delta, D, self.truncated,
                                   self.fixed_first)

    def compatible(self, other: "TruncGWishartParams") -> bool:
        """Same graph, shape, truncation and pinning (D may differ)."""
        return (self.graph.digest() == other.graph.digest()
                and self.delta == other.delta
                and self.truncated == other.truncated
                and self.fixed_first == other.fixed_first)


def log_unnorm_density(K, p: TruncGWishartParams) -> float:
    """``((delta-2)/2) log|K| - <K, D>/2`` on the support, else ``-inf``."""
    K = np.asarray(K, dtype=float)
    inside = in_restricted_cone(K, p.graph) if p.truncated else in_cone(K, p.graph)
    if not inside:
        return -np.inf
    _, logdet = np.linalg.slogdet(K)
    return 0.5 * (p.delta - 2.0) * logdet - 0.5 * float(np.sum(K * p.D))


def initial_factor(p: TruncGWishartParams) -> CholeskyFactor:
    """Feasible start: the Cholesky root of the mode, first entry pinned."""
    mode = p.mode()
    mode[~(p.graph.adjacency() | np.eye(p.n, dtype=bool))] = 0.0
    A = p.graph.adjacency()
    if p.truncated and not in_restricted_cone(mode, p.graph):
        # mode on the boundary (zero edge entries): step inside along -W
        d = np.sqrt(np.diag(mode))
        c = 0.5 / max(1, p.graph.degrees().max())
        mode = d[:, None] * (np.eye(p.n) - c * A) * d[None, :]
    try:
        phi = CholeskyFactor.from_precision(mode, p.graph)
    except InfeasibleStateError:
        if p.truncated:
            raise
        # zeroing the non-edges of a dense mode can break definiteness
        phi = CholeskyFactor(p.graph, np.diag(np.sqrt(np.diag(mode))))
    if p.fixed_first is not None:
        # rescaling phi[0, 0] keeps every edge sign in row 0
        phi.phi[0, 0] = math.sqrt(p.fixed_first)
        phi = complete_nonfree(phi)
    return phi


# -- truncated normal ---------------------------------------------------------


@dataclass(frozen=True)
class TruncNormalSpec:
    """Normal(mean, sd^2) restricted to ``(lower, upper)``."""

    mean: float
    sd: float
    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("sd must be positive")
        if not self.lower < self.upper:
            raise ValueError(f"empty interval ({self.lower}, {self.upper})")

    def _frozen(self):
        a = (self.lower - self.mean) / self.sd
        b = (self.upper - self.mean) / self.sd
        return stats.truncnorm(a, b, loc=self.mean, scale=self.sd)


def sample_truncnorm(spec: TruncNormalSpec, rng=None, size=None):
    rng = np.random.default_rng(rng)
    return spec._frozen().rvs(size=size, random_state=rng)


def truncnorm_logpdf(x, spec: TruncNormalSpec):
    x = np.asarray(x, dtype=float)
    out = spec._frozen().logpdf(x)
    out = np.where((x > spec.lower) & (x < spec.upper), out, -np.inf)
    return out if out.ndim else float(out)


# -- Metropolis-Hastings ------------------------------------------------------


@dataclass
class AcceptanceRecord:
    """Proposal and acceptance tallies accumulated over sweeps."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros(kern.N_COUNTS, np.int64))

    def merge(self, other: "AcceptanceRecord") -> "AcceptanceRecord":
        return AcceptanceRecord(self.counts + other.counts)

    @property
    def diag_rate(self) -> float:
        c = self.counts
        return c[kern.C_ACC_DIAG] / c[kern.C_PROP_DIAG] if c[kern.C_PROP_DIAG] else float("nan")

    @property
    def offdiag_rate(self) -> float:
        c = self.counts
        return c[kern.C_ACC_OFF] / c[kern.C_PROP_OFF] if c[kern.C_PROP_OFF] else float("nan")

    @property
    def rate(self) -> float:
        c = self.counts
        prop = c[kern.C_PROP_DIAG] + c[kern.C_PROP_OFF]
        return (c[kern.C_ACC_DIAG] + c[kern.C_ACC_OFF]) / prop if prop else float("nan")


def _seed(rng) -> int:
    return int(rng.integers(0, 2**32 - 1))


class _Sweeper:
    """Holds kernel arguments for repeated sweeps under one parameter set."""

    def __init__(self, p: TruncGWishartParams, sigma: float, maxdeg: int = kern.MAXDEG):
        self.p = p
        self.adj = p.graph.adjacency()
        self.nu = p.nu
        self.sigma = float(sigma)
        self.buffers = kern.SweepBuffers(p.n, maxdeg)

    def args(self, D=None):
        D = self.p.D if D is None else D
        return (self.adj, self.nu, float(self.p.delta), D, bool(self.p.truncated),
                self.p.fixed_first is not None, self.sigma)


def _check_status(st):
    if st != kern.OK:
        raise InfeasibleStateError("sampler state left the supported cone")


def mh_step(phi: CholeskyFactor, p: TruncGWishartParams, sigma_m: float = DEFAULT_SIGMA,
            rng=None) -> tuple[CholeskyFactor, AcceptanceRecord]:
    """One lexicographic Metropolis-Hastings sweep over the free entries.

    Each free entry gets a truncated-normal proposal centred at its current
    value (sd ``sigma_m``) on its conditional support; ``sigma_m = 0`` leaves
    the state unchanged and always accepts.

    Returns
    -------
    phi_new : CholeskyFactor
    record : AcceptanceRecord
    """
    rng = np.random.default_rng(rng)
    if sigma_m < 0:
        raise ValueError("sigma_m must be non-negative")
    sw = _Sweeper(p, sigma_m)
    out = phi.copy()
    rec = AcceptanceRecord()
    kern.seed_rng(_seed(rng))
    st = kern.mh_sweep(out.phi, *sw.args(), rec.counts, *sw.buffers.args())
    _check_status(st)
    return out, rec


def sample(p: TruncGWishartParams, n_samples: int, rng=None, sigma_m: float = DEFAULT_SIGMA,
           burn: int = 100, thin: int = 1, init: CholeskyFactor | None = None,
           ) -> tuple[np.ndarray, AcceptanceRecord]:
    """Draw ``n_samples`` precision matrices from one chain.

    Returns an array of shape ``(n_samples, n, n)`` and the acceptance tallies.
    """
    rng = np.random.default_rng(rng)
    phi = (init if init is not None else initial_factor(p)).phi.copy()
    sw = _Sweeper(p, sigma_m)
    rec = AcceptanceRecord()
    st, phis = kern.run_chain(phi, *sw.args(), int(n_samples), int(thin), int(burn),
                              _seed(rng), rec.counts, *sw.buffers.args())
    _check_status(st)
    return np.einsum("ski,skj->sij", phis, phis), rec


# -- normalising-constant ratios ----------------------------------------------


def log_mean_exp(z) -> float:
    z = np.asarray(z, dtype=float)
    return float(special.logsumexp(z) - math.log(z.size))


@dataclass(frozen=True)
class LogRatioEstimate:
    """Estimate of ``log I(p1) - log I(p2)`` with its across-chain spread."""

    value: float
    per_chain: np.ndarray
    acceptance: AcceptanceRecord

    @property
    def stderr(self) -> float:
        k = self.per_chain.size
        return float(np.std(self.per_chain, ddof=1) / math.sqrt(k)) if k > 1 else float("nan")

    def __float__(self):
        return self.value


def _ratio_chain(p2, Ddiff, iters, burn, seed, sigma, maxdeg):
    sw = _Sweeper(p2, sigma, maxdeg)
    phi = initial_factor(p2).phi.copy()
    counts = np.zeros(kern.N_COUNTS, np.int64)
    st, lme, _ = kern.ratio_chain(phi, *sw.args(), Ddiff, int(iters), int(burn), seed,
                                  counts, *sw.buffers.args())
    _check_status(st)
    return lme, counts


def estimate_logratio(p1: TruncGWishartParams, p2: TruncGWishartParams, chains: int = 10,
                      iters: int = 100_000, rng=None, sigma_m: float = DEFAULT_SIGMA,
                      burn_frac: float = 0.1, n_jobs: int = 1,
                      maxdeg: int = kern.MAXDEG) -> LogRatioEstimate:
    """Importance-sampling estimate of ``log I(p1) - log I(p2)``.

    Each chain targets ``p2``; with ``Z = -<K, D1 - D2>/2`` the chain's
    estimate is ``log mean exp(Z)`` (stabilised), and chain estimates are
    averaged. ``burn_frac * iters`` extra sweeps are discarded first.
    """
    if not p1.compatible(p2):
        raise ValueError("parameter sets must share graph, delta, truncation and pinning")
    rng = np.random.default_rng(rng)
    seeds = [_seed(rng) for _ in range(chains)]
    Ddiff = np.ascontiguousarray(p1.D - p2.D)
    burn = int(round(burn_frac * iters))

    def work(seed):
        return _ratio_chain(p2, Ddiff, iters, burn, seed, sigma_m, maxdeg)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(work, seeds))
    else:
        results = [work(s) for s in seeds]
    per_chain = np.array([r[0] for r in results])
    rec = AcceptanceRecord(sum(r[1] for r in results))
    return LogRatioEstimate(float(per_chain.mean()), per_chain, rec)


SCALINGS = ("model", "unit")


def rho_params(graph: AdjacencyGraph, delta: float, rho: float, truncated: bool = True,
               fixed_first: float | None = None, scaling: str = "model") -> TruncGWishartParams:
    """Parameters with rate ``c D(rho)``; ``c = delta - 2`` ("model") or 1 ("unit")."""
    if scaling not in SCALINGS:
        raise ValueError(f"scaling must be one of {SCALINGS}")
    c = delta - 2.0 if scaling == "model" else 1.0
    return TruncGWishartParams(graph, delta, c * d_rho_inverse(graph, rho), truncated,
                               fixed_first)


@dataclass
class NormConstTable:
    """Log-ratios ``log I(rho_k) - log I(rho_{k+1})`` over an ordered grid."""

    grid: np.ndarray
    log_ratios: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.log_ratios = np.asarray(self.log_ratios, dtype=float)
        if self.grid.size and np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.log_ratios.shape != (max(self.grid.size - 1, 0),):
            raise ValueError("need one log-ratio per consecutive grid pair")
        if not np.all(np.isfinite(self.log_ratios)):
            raise ValueError("log-ratios must be finite")

    @property
    def cache_key(self) -> str:
        m = self.metadata
        return f"{m.get('graph')}-d{m.get('delta')}-{'t' if m.get('truncated') else 'u'}"

    def log_norm(self) -> np.ndarray:
        """``log I(rho_k) - log I(rho_0)`` for every grid value."""
        return np.concatenate([[0.0], -np.cumsum(self.log_ratios)])

    def log_ratio(self, rho_a: float, rho_b: float) -> float:
        """``log I(rho_a) - log I(rho_b)`` for any two grid values."""
        ln = self.log_norm()
        return float(ln[self._index(rho_a)] - ln[self._index(rho_b)])

    def _index(self, rho):
        hit = np.flatnonzero(np.abs(self.grid - rho) < 1e-9)
        if hit.size == 0:
            raise KeyError(f"rho = {rho} is not in the table grid")
        return int(hit[0])

    def check_matches(self, graph: AdjacencyGraph, delta: float, truncated: bool,
                      fixed_first=None, scaling: str = "model") -> None:
        """Raise ``ValueError`` unless the table was built for this setting."""
        m = self.metadata
        want = {"graph": graph.digest(), "delta": float(delta), "truncated": bool(truncated),
                "fixed_first": None if fixed_first is None else float(fixed_first),
                "scaling": scaling}
        bad = [k for k, v in want.items() if m.get(k) != v]
        if bad:
            detail = ", ".join(f"{k}: table {m.get(k)!r} vs {want[k]!r}" for k in bad)
            raise ValueError(f"normalising-constant table does not match the model ({detail})")

    @classmethod
    def zeros(cls, grid, graph, delta, truncated, fixed_first=None, scaling="model"):
        """All-zero table (constants treated as equal), e.g. for diagnostics."""
        grid = np.asarray(grid, dtype=float)
        meta = {"graph": graph.digest(), "delta": float(delta), "truncated": bool(truncated),
                "fixed_first": None if fixed_first is None else float(fixed_first),
                "scaling": scaling, "chains": 0, "iterations": 0, "seed": None}
        return cls(grid, np.zeros(max(grid.size - 1, 0)), meta)

    def to_json(self) -> str:
        doc = {"grid": [float(x) for x in self.grid],
               "log_ratios": [float(x) for x in self.log_ratios],
               "metadata": self.metadata}
        return json.dumps(doc, indent=1, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "NormConstTable":
        doc = json.loads(Path(path).read_text())
        return cls(np.array(doc["grid"]), np.array(doc["log_ratios"]), doc["metadata"])


def build_table(graph: AdjacencyGraph, delta: float = 3.0, grid=RHO_GRID,
                truncated: bool = True, fixed_first: float | None = None,
                scaling: str = "model", chains: int = 10, iters: int = 100_000,
                seed: int = 0, sigma_m: float = DEFAULT_SIGMA, n_jobs: int = 1,
                progress=None) -> NormConstTable:
    """Estimate consecutive log-ratios of normalising constants over ``grid``.

    For each pair ``rho_k < rho_{k+1}`` chains target the smaller value, as
    in :func:`estimate_logratio`. Deterministic given ``seed``.
    """
    grid = np.asarray(grid, dtype=float)
    rng = np.random.default_rng(seed)
    ratios, errs = [], []
    for k in range(grid.size - 1):
        lo = rho_params(graph, delta, grid[k], truncated, fixed_first, scaling)
        hi = rho_params(graph, delta, grid[k + 1], truncated, fixed_first, scaling)
        est = estimate_logratio(hi, lo, chains, iters, rng, sigma_m, n_jobs=n_jobs)
        ratios.append(-est.value)
        errs.append(est.stderr)
        if progress is not None:
            progress(k, grid[k], grid[k + 1], -est.value)
    meta = {"graph": graph.digest(), "delta": float(delta), "truncated": bool(truncated),
            "fixed_first": None if fixed_first is None else float(fixed_first),
            "scaling": scaling, "chains": int(chains), "iterations": int(iters),
            "seed": int(seed), "sigma_m": float(sigma_m), "burn_frac": 0.1,
            "stderr": [float(e) for e in errs]}
    return NormConstTable(grid, np.array(ratios), meta)


# -- graph normalising constants with identity rate ---------------------------


def log_normconst_identity(graph: AdjacencyGraph, delta: float, scale: float = 1.0,
                           draws: int = 20_000, rng=None, fixed_first: bool = False) -> float:
    """Monte Carlo ``log`` of the untruncated constant with rate ``scale * I``.

    The constant is the integral, over the free Cholesky entries, of
    ``prod_i phi_ii^(delta + nu_i - 1) exp(-tr(K) scale / 2)``. The free
    entries factor into chi and normal integrals; what remains is
    ``E[exp(-scale/2 * sum of squared completed entries)]`` under independent
    draws ``scale * phi_ii^2 ~ chi2(delta + nu_i)``, ``phi_ij ~ N(0, 1/scale)``.
    With ``fixed_first`` the entry ``phi_00`` is held at 1 and not integrated.
    """
    rng = np.random.default_rng(rng)
    n = graph.n
    nu = nu_counts(graph)
    A = graph.adjacency()
    k = delta + nu
    start = 1 if fixed_first else 0
    log_free = 0.0
    if fixed_first:
        log_free -= 0.5 * scale
    for i in range(start, n):
        log_free += special.gammaln(k[i] / 2) + (k[i] / 2) * math.log(2.0 / scale) - math.log(2.0)
    log_free += graph.n_edges * 0.5 * math.log(2.0 * math.pi / scale)

    phi = np.zeros((draws, n, n))
    for i in range(n):
        if i == 0 and fixed_first:
            phi[:, 0, 0] = 1.0
        else:
            phi[:, i, i] = np.sqrt(rng.chisquare(k[i], draws) / scale)
        for j in range(i + 1, n):
            if A[i, j]:
                phi[:, i, j] = rng.normal(0.0, 1.0 / math.sqrt(scale), draws)
    nonfree = np.zeros(draws)
    for i in range(n):
        for j in range(i + 1, n):
            if not A[i, j]:
                v = -np.einsum("sd,sd->s", phi[:, :i, i], phi[:, :i, j]) / phi[:, i, i]
                phi[:, i, j] = v
                nonfree += v * v
    return log_free + log_mean_exp(-0.5 * scale * nonfree)
