"""CAR-family precision matrices, the discrete autocorrelation grid, and
prior calibration for the average relative risk."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .graph import AdjacencyGraph

# 0, 0.05, ..., 0.80, then 0.82, ..., 0.90, then 0.91, ..., 0.99
RHO_GRID = np.round(
    np.concatenate([
        0.05 * np.arange(17),
        0.82 + 0.02 * np.arange(5),
        0.91 + 0.01 * np.arange(9),
    ]),
    2,
)
RHO_GRID.setflags(write=False)

# coarse alternative used for prior-sensitivity runs
COARSE_RHO_GRID = np.round(np.concatenate([0.05 + 0.1 * np.arange(10), [0.99]]), 2)
COARSE_RHO_GRID.setflags(write=False)


def rho_grid() -> np.ndarray:
    """Writable copy of the default 31-value autocorrelation grid."""
    return RHO_GRID.copy()


def grid_index(grid, rho: float) -> int:
    """Position of ``rho`` in ``grid`` (to within 1e-9)."""
    grid = np.asarray(grid, dtype=float)
    hit = np.flatnonzero(np.abs(grid - rho) < 1e-9)
    if hit.size == 0:
        raise ValueError(f"rho = {rho} is not a grid value")
    return int(hit[0])


def _weights(g: AdjacencyGraph, weights) -> np.ndarray:
    if weights is None:
        return g.weights()
    W = np.asarray(weights, dtype=float)
    if W.shape != (g.n, g.n) or not np.allclose(W, W.T):
        raise ValueError("weights must be a symmetric n x n matrix")
    return W


def car_matrix(g: AdjacencyGraph, rho: float, weights=None) -> np.ndarray:
    """``D_w - rho W`` with ``D_w`` the diagonal of row sums of ``W``.

    ``weights`` defaults to the binary adjacency of ``g``.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    W = _weights(g, weights)
    return np.diag(W.sum(axis=1)) - rho * W


def d_rho_inverse(g: AdjacencyGraph, rho: float, weights=None) -> np.ndarray:
    """``D(rho) = (D_w - rho W)^{-1}`` via a Cholesky solve."""
    if rho >= 1.0:
        raise ValueError("D_w - W is singular; rho must be below 1")
    Q = car_matrix(g, rho, weights)
    try:
        cf = linalg.cho_factor(Q, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("D_w - rho W is not positive definite "
                         "(isolated vertex?)") from exc
    D = linalg.cho_solve(cf, np.eye(g.n))
    return 0.5 * (D + D.T)


def car_logdet(g: AdjacencyGraph, rho: float, weights=None) -> float:
    """log-determinant of ``D_w - rho W`` (proper case only)."""
    Q = car_matrix(g, rho, weights)
    c = linalg.cholesky(Q, lower=True)
    return 2.0 * float(np.sum(np.log(np.diag(c))))


@dataclass(frozen=True)
class CarPrecision:
    """Conditional autoregressive precision structure.

    ``flavor`` is ``"proper"`` (``D_w - rho W``), ``"icar"`` (``rho = 1``,
    rank deficient) or ``"independent"`` (identity).
    """

    graph: AdjacencyGraph
    rho: float = 0.99
    flavor: str = "proper"

    def __post_init__(self):
        if self.flavor not in ("proper", "icar", "independent"):
            raise ValueError(f"unknown CAR flavor {self.flavor!r}")
        if self.flavor == "icar" and self.rho != 1.0:
            object.__setattr__(self, "rho", 1.0)
        if self.flavor == "proper" and not 0.0 <= self.rho < 1.0:
            raise ValueError("proper CAR needs 0 <= rho < 1")

    @property
    def matrix(self) -> np.ndarray:
        if self.flavor == "independent":
            return np.eye(self.graph.n)
        return car_matrix(self.graph, self.rho)

    @property
    def is_proper(self) -> bool:
        return self.flavor != "icar"

    def logdet(self) -> float:
        if not self.is_proper:
            raise ValueError("the intrinsic CAR precision is singular")
        if self.flavor == "independent":
            return 0.0
        return car_logdet(self.graph, self.rho)


def calibrate_hyperpriors(g: AdjacencyGraph, rho_ref: float = 0.99,
                          sigma2_alpha: float = 1.0, a: float = 0.5,
                          b: float = 0.0015, draws: int = 400_000,
                          rng=None, level: float = 0.95) -> tuple[float, float]:
    """Prior interval for ``exp(mean(u))`` with ``K`` held at ``D(rho_ref)^{-1}``.

    Given ``alpha`` and ``tau2``, the area average of
    ``u ~ N(alpha 1, (tau2 K)^{-1})`` is normal with mean ``alpha`` and
    variance ``1' K^{-1} 1 / (n^2 tau2)``. ``tau2 ~ Gamma(a, rate=b)``.

    Returns
    -------
    (lower, upper) : central ``level`` interval, estimated from ``draws``
        Monte Carlo samples.
    """
    rng = np.random.default_rng(rng)
    ones = np.ones(g.n)
    s = float(ones @ d_rho_inverse(g, rho_ref) @ ones) / g.n ** 2
    alpha = rng.normal(0.0, np.sqrt(sigma2_alpha), draws)
    tau2 = rng.gamma(a, 1.0 / b, draws)
    ubar = alpha + np.sqrt(s / tau2) * rng.standard_normal(draws)
    q = 0.5 * (1.0 - level)
    lo, hi = np.exp(np.quantile(ubar, [q, 1.0 - q]))
    return float(lo), float(hi)
