"""Cholesky parameterisation of graph-constrained precision matrices.

A precision matrix ``K`` with zeros on the non-edges of ``G`` is written as
``K = Phi' Phi`` with ``Phi`` upper triangular. The diagonal of ``Phi`` and
the entries ``(i, j)`` for edges of ``G`` are free; the remaining entries are
fixed by the zero pattern and are filled row by row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .graph import AdjacencyGraph

NONEDGE_TOL = 1e-10


class InfeasibleStateError(ValueError):
    """The current Cholesky factor lies outside the supported cone."""


@dataclass
class CholeskyFactor:
    """Upper-triangular square root of a graph-constrained precision matrix.

    Parameters
    ----------
    graph : AdjacencyGraph
    phi : ndarray of shape (n, n)
        Only the upper triangle is read; the strict lower triangle is zeroed.
    """

    graph: AdjacencyGraph
    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.shape != (self.graph.n, self.graph.n):
            raise ValueError(f"phi has shape {phi.shape}, expected {(self.graph.n,) * 2}")
        self.phi = np.triu(phi)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def free_mask(self) -> np.ndarray:
        """Boolean mask of free entries (diagonal and upper-triangle edges)."""
        return np.triu(self.graph.adjacency()) | np.eye(self.n, dtype=bool)

    @property
    def K(self) -> np.ndarray:
        return self.phi.T @ self.phi

    def copy(self) -> "CholeskyFactor":
        return CholeskyFactor(self.graph, self.phi.copy())

    def free_entries(self) -> list[tuple[int, int]]:
        """Free positions in lexicographic (sweep) order."""
        m = self.free_mask
        return [(i, j) for i in range(self.n) for j in range(i, self.n) if m[i, j]]

    @classmethod
    def from_precision(cls, K, graph: AdjacencyGraph) -> "CholeskyFactor":
        """Factor a precision matrix in ``cone+(G)`` and re-complete it."""
        K = np.asarray(K, dtype=float)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise InfeasibleStateError("precision matrix is not positive definite") from exc
        return complete_nonfree(cls(graph, L.T))


def complete_nonfree(phi: CholeskyFactor) -> CholeskyFactor:
    """Fill the non-free entries so that ``K`` vanishes off the graph.

    Entries are filled in lexicographic order; free entries are untouched.
    """
    if np.any(np.diag(phi.phi) <= 0):
        raise InfeasibleStateError("Cholesky factor needs a strictly positive diagonal")
    out = phi.copy()
    kern.complete_rows(out.phi, phi.graph.adjacency(), 0)
    return out


def in_cone(K, g: AdjacencyGraph, tol: float = NONEDGE_TOL) -> bool:
    """Positive definite with zeros (within ``tol``) on the non-edges of ``g``."""
    K = np.asarray(K, dtype=float)
    if K.shape != (g.n, g.n):
        raise ValueError(f"matrix is {K.shape}, graph has {g.n} vertices")
    A = g.adjacency()
    off = ~np.eye(g.n, dtype=bool)
    if np.any(np.abs(K[off & ~A]) > tol):
        return False
    try:
        np.linalg.cholesky(0.5 * (K + K.T))
    except np.linalg.LinAlgError:
        return False
    return True


def in_restricted_cone(K, g: AdjacencyGraph, tol: float = NONEDGE_TOL) -> bool:
    """Membership in ``cone+(G)`` with strictly negative entries on edges."""
    if not in_cone(K, g, tol):
        return False
    K = np.asarray(K, dtype=float)
    return bool(np.all(K[g.adjacency()] < 0))


@dataclass(frozen=True)
class SupportInterval:
    """Open interval ``(lower, upper)`` with extended-real endpoints."""

    lower: float
    upper: float
    exact: bool = True

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"empty interval ({self.lower}, {self.upper})")

    def __contains__(self, x) -> bool:
        return self.lower < x < self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _support(phi: CholeskyFactor, i0: int, j0: int, maxdeg: int) -> SupportInterval:
    poly, pdeg, acc, accabs = kern.workspace(phi.n, maxdeg)
    st, lo, hi, exact = kern.support_interval(
        phi.phi, phi.graph.adjacency(), i0, j0, poly, pdeg, acc, accabs
    )
    if st != kern.OK:
        raise InfeasibleStateError(
            f"current factor violates the cone constraints (element {i0}, {j0})"
        )
    return SupportInterval(float(lo), float(hi), bool(exact))


def offdiag_support(phi: CholeskyFactor, i0: int, j0: int,
                    maxdeg: int = 16) -> SupportInterval:
    """Conditional support of the free edge entry ``phi[i0, j0]``.

    All other free entries are held fixed and non-free entries follow by
    completion. The result is the connected piece of the feasible set (negative
    edge entries of ``K``) containing the current value. Each constraint is a
    polynomial in the entry; those of degree above ``maxdeg`` are dropped and
    ``exact`` is then False.
    """
    if not (i0 < j0 and (i0, j0) in phi.graph.edges):
        raise ValueError(f"({i0}, {j0}) is not a free off-diagonal entry")
    return _support(phi, i0, j0, maxdeg)


def diag_support(phi: CholeskyFactor, i0: int, maxdeg: int = 16) -> SupportInterval:
    """Conditional support of the diagonal entry ``phi[i0, i0]``.

    Bounds come from the edge constraints expressed as polynomials in
    ``1 / phi[i0, i0]``; the lower end is never below zero.
    """
    if not 0 <= i0 < phi.n:
        raise ValueError(f"vertex {i0} outside 0..{phi.n - 1}")
    return _support(phi, i0, i0, maxdeg)
