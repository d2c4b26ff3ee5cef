"""Independent reference computations used only by the tests.

Everything here is written directly from the defining formulas with plain
numpy/scipy (no package kernels), so it can serve as ground truth.
"""

import itertools
import math

import numpy as np
from scipy import special, stats


def complete_batch(P, A, start=0):
    """Fill non-free entries of a stack of factors ``P`` (g, n, n) in place."""
    n = P.shape[1]
    for i in range(start, n):
        for j in range(i + 1, n):
            if not A[i, j]:
                P[:, i, j] = -np.einsum("gd,gd->g", P[:, :i, i], P[:, :i, j]) / P[:, i, i]
    return P


def restricted_ok(P, A, tol=1e-10):
    """Per factor: positive diagonal, zero non-edges, negative edges of K."""
    K = np.einsum("gki,gkj->gij", P, P)
    n = A.shape[0]
    iu = np.triu_indices(n, 1)
    e = A[iu]
    ok = np.all(K[:, iu[0][e], iu[1][e]] < 0, axis=1)
    ok &= np.all(np.abs(K[:, iu[0][~e], iu[1][~e]]) < tol, axis=1)
    ok &= np.all(np.diagonal(P, axis1=1, axis2=2) > 0, axis=1)
    return ok


def feasible_factor(A, rng):
    """Upper Cholesky root of a random matrix in the restricted cone."""
    n = A.shape[0]
    W = A.astype(float)
    w = np.triu(rng.uniform(0.2, 1.0, (n, n)), 1)
    w = (w + w.T) * W
    K = np.diag(w.sum(axis=1) + rng.uniform(0.05, 1.0, n)) - w
    return np.linalg.cholesky(K).T


def grid_support(phi, A, i, j, points=10_000, span=50.0):
    """Feasibility of each grid value for entry (i, j), others fixed."""
    if i == j:
        grid = np.linspace(0.0, span, points + 1)[1:]
    else:
        grid = np.linspace(-span, 0.0, points + 1)[:-1]
    P = np.repeat(phi[None], grid.size, axis=0)
    P[:, i, j] = grid
    complete_batch(P, A, i)
    return grid, restricted_ok(P, A)


def log_wishart_const(delta, D):
    """log of the integral of |K|^((delta-2)/2) exp(-tr(KD)/2) over all SPD K."""
    n = D.shape[0]
    nu = delta + n - 1
    return (0.5 * nu * n * math.log(2.0) + special.multigammaln(0.5 * nu, n)
            - 0.5 * nu * np.linalg.slogdet(D)[1])


def log_decomposable_const(cliques, separators, delta, D):
    """G-Wishart constant of a decomposable graph from its clique tree."""
    tot = sum(log_wishart_const(delta, D[np.ix_(c, c)]) for c in cliques)
    return tot - sum(log_wishart_const(delta, D[np.ix_(s, s)]) for s in separators)


def truncated_wishart_rejection(n, delta, size, rng, scale=None):
    """Draws of K ~ Wishart(delta + n - 1, scale) kept when all K_ij < 0."""
    scale = np.eye(n) if scale is None else scale
    dist = stats.wishart(df=delta + n - 1, scale=scale)
    iu = np.triu_indices(n, 1)
    kept = []
    total = 0
    while total < size:
        K = dist.rvs(size=max(4 * size, 1000), random_state=rng)
        K = K.reshape(-1, n, n)
        K = K[np.all(K[:, iu[0], iu[1]] < 0, axis=1)]
        kept.append(K)
        total += K.shape[0]
    return np.concatenate(kept)[:size]


def dense_matnorm_loglik(U, M, K_R, K_C):
    """Matrix-normal log density through the explicit Kronecker covariance."""
    n, C = U.shape
    cov = np.kron(np.linalg.inv(K_C), np.linalg.inv(K_R))
    mean = np.kron(np.asarray(M), np.ones(n))
    return stats.multivariate_normal(mean, cov).logpdf(U.T.ravel())


def all_graphs(C):
    """Every edge subset of the complete graph on C vertices."""
    pairs = list(itertools.combinations(range(C), 2))
    for bits in range(2 ** len(pairs)):
        yield [p for k, p in enumerate(pairs) if bits >> k & 1]
