"""Compiled inner loops for the Cholesky-space samplers.

All functions operate on a dense upper-triangular ``phi`` and a symmetric
boolean adjacency ``adj``. Free entries are the diagonal and ``(i, j)`` with
``adj[i, j]``; everything else above the diagonal is completed so that the
corresponding precision entry is zero.

Random draws use numba's internal generator. Chain-level kernels take an
explicit ``seed`` (single sweeps rely on :func:`seed_rng`), so results are
reproducible regardless of call order.
"""

import math

import numpy as np
from numba import njit

MAXDEG = 4
INF = np.inf

OK = 0
INFEASIBLE = 1

# polynomial degree markers in the support workspace
CONST = -1
UNKNOWN = -2

# counts layout used by the sweep kernels
C_PROP_DIAG, C_ACC_DIAG, C_PROP_OFF, C_ACC_OFF = 0, 1, 2, 3
C_DEGENERATE, C_INEXACT, C_OUTSIDE = 4, 5, 6
N_COUNTS = 7


@njit(cache=True)
def seed_rng(seed):
    np.random.seed(seed)


@njit(cache=True)
def complete_rows(phi, adj, start):
    """Fill non-free entries of rows ``start..n-1`` in lexicographic order."""
    n = phi.shape[0]
    for i in range(start, n):
        pii = phi[i, i]
        for j in range(i + 1, n):
            if not adj[i, j]:
                s = 0.0
                for d in range(i):
                    s += phi[d, i] * phi[d, j]
                phi[i, j] = -s / pii


@njit(cache=True)
def row_quad(phi, r, D):
    """``phi[r] @ D @ phi[r]`` using only the upper-triangular support."""
    n = phi.shape[0]
    q = 0.0
    for a in range(r, n):
        pa = phi[r, a]
        if pa == 0.0:
            continue
        s = 0.0
        for b in range(r, n):
            s += D[a, b] * phi[r, b]
        q += pa * s
    return q


@njit(cache=True)
def trace_KD(phi, D):
    """``<phi.T @ phi, D>`` as a sum of row quadratic forms."""
    t = 0.0
    for r in range(phi.shape[0]):
        t += row_quad(phi, r, D)
    return t


@njit(cache=True)
def edges_negative(phi, adj, start):
    """True if every edge entry of ``phi' phi`` in rows >= ``start`` is < 0."""
    n = phi.shape[0]
    for i in range(start, n):
        for j in range(i + 1, n):
            if adj[i, j]:
                s = 0.0
                for d in range(i + 1):
                    s += phi[d, i] * phi[d, j]
                if s >= 0.0:
                    return False
    return True


# -- truncated normal ---------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


@njit(cache=True)
def ndtr_diff(a, b):
    """P(a < Z < b) for standard normal Z, accurate in either tail."""
    if a >= 0.0:
        return 0.5 * (math.erfc(a / _SQRT2) - math.erfc(b / _SQRT2))
    if b <= 0.0:
        return 0.5 * (math.erfc(-b / _SQRT2) - math.erfc(-a / _SQRT2))
    return 0.5 * (math.erf(b / _SQRT2) - math.erf(a / _SQRT2))


@njit(cache=True)
def log_tn_mass(mu, sigma, lo, hi):
    """log of the normal mass of ``(lo, hi)`` under N(mu, sigma^2)."""
    return math.log(ndtr_diff((lo - mu) / sigma, (hi - mu) / sigma))


@njit(cache=True)
def _tail_std(a, b):
    # standard normal restricted to (a, b) with a >= 0
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    if b - a < 1.0 / lam:
        while True:
            x = a + (b - a) * np.random.random()
            if np.random.random() < math.exp(-0.5 * (x * x - a * a)):
                return x
    while True:
        x = a + np.random.exponential(1.0 / lam)
        if x >= b:
            continue
        if np.random.random() < math.exp(-0.5 * (x - lam) ** 2):
            return x


@njit(cache=True)
def tn_std(a, b):
    """Draw from the standard normal restricted to ``(a, b)``."""
    if a >= 0.0:
        return _tail_std(a, b)
    if b <= 0.0:
        return -_tail_std(-b, -a)
    if ndtr_diff(a, b) > 0.3:
        while True:
            x = np.random.standard_normal()
            if a < x < b:
                return x
    # narrow interval around zero: uniform proposal, acceptance >= 0.7
    while True:
        x = a + (b - a) * np.random.random()
        if np.random.random() < math.exp(-0.5 * x * x):
            return x


@njit(cache=True)
def tn_draw(mu, sigma, lo, hi):
    if sigma == 0.0:
        return mu
    return mu + sigma * tn_std((lo - mu) / sigma, (hi - mu) / sigma)


# -- polynomial support computation -------------------------------------------


@njit(cache=True)
def _poly_eval(c, deg, z):
    v = 0.0
    for k in range(deg, -1, -1):
        v = v * z + c[k]
    return v


@njit(cache=True)
def _trim(c, cabs, deg):
    while deg > 0 and abs(c[deg]) <= 1e-11 * cabs[deg]:
        c[deg] = 0.0
        deg -= 1
    return deg


@njit(cache=True)
def _update_bounds(c, deg, z, lo, hi):
    """Intersect (lo, hi) with the component of {p < 0} that contains z.

    Returns (status, lo, hi).
    """
    if _poly_eval(c, deg, z) >= 0.0:
        return INFEASIBLE, lo, hi
    if deg == 0:
        return OK, lo, hi
    if deg == 1:
        r = -c[0] / c[1]
        if r > z:
            hi = min(hi, r)
        elif r < z:
            lo = max(lo, r)
        return OK, lo, hi
    if deg == 2:
        a, b, cc = c[2], c[1], c[0]
        disc = b * b - 4.0 * a * cc
        if disc < 0.0:
            return OK, lo, hi
        sq = math.sqrt(disc)
        q = -0.5 * (b + sq) if b >= 0.0 else -0.5 * (b - sq)
        roots = np.empty(2)
        m = 0
        if q != 0.0:
            roots[m] = q / a
            m += 1
            roots[m] = cc / q
            m += 1
        else:
            roots[m] = 0.0
            m += 1
        for k in range(m):
            r = roots[k]
            if r > z:
                hi = min(hi, r)
            elif r < z:
                lo = max(lo, r)
        return OK, lo, hi
    coeffs = np.empty(deg + 1, dtype=np.complex128)
    for k in range(deg + 1):
        coeffs[k] = c[deg - k]
    rts = np.roots(coeffs)
    for k in range(rts.shape[0]):
        r = rts[k].real
        if abs(rts[k].imag) > 1e-9 * max(1.0, abs(r)):
            continue
        if r > z:
            hi = min(hi, r)
        elif r < z:
            lo = max(lo, r)
    return OK, lo, hi


@njit(cache=True)
def support_interval(phi, adj, i0, j0, poly, pdeg, acc, accabs):
    """Conditional support of free entry ``(i0, j0)`` in the restricted cone.

    The entry is replaced by a variable ``z`` (``z = phi[i0, j0]`` off the
    diagonal, ``z = 1 / phi[i0, i0]`` on it). Every completed entry and every
    edge constraint below row ``i0`` is then a polynomial in ``z``; the
    support is the component of the feasible set holding the current value.

    Constraints whose polynomial degree would exceed the workspace cap are
    skipped, so the interval is then a superset of that component; ``exact`` reports
    whether every constraint was used. Coefficients never depend on the
    current value, so the interval is the same from any point inside it.

    Returns ``(status, lo, hi, exact)`` on the scale of ``phi[i0, j0]``.
    """
    n = phi.shape[0]
    maxdeg = poly.shape[2] - 1
    for i in range(n):
        for j in range(i, n):
            pdeg[i, j] = CONST
    diag = i0 == j0
    if diag:
        zt = 1.0 / phi[i0, i0]
        lo, hi = 0.0, INF
        for j in range(i0 + 1, n):
            s = 0.0
            for d in range(i0):
                s += phi[d, i0] * phi[d, j]
            if adj[i0, j]:
                # K[i0, j] * z = phi[i0, j] + s * z
                acc[0] = phi[i0, j]
                acc[1] = s
                st, lo, hi = _update_bounds(acc, 1 if s != 0.0 else 0, zt, lo, hi)
                if st != OK:
                    return st, 0.0, 0.0, True
            elif s != 0.0:
                pdeg[i0, j] = 1
                poly[i0, j, 0] = 0.0
                poly[i0, j, 1] = -s
    else:
        zt = phi[i0, j0]
        lo, hi = -INF, INF
        s = 0.0
        for d in range(i0):
            s += phi[d, i0] * phi[d, j0]
        acc[0] = s
        acc[1] = phi[i0, i0]
        st, lo, hi = _update_bounds(acc, 1, zt, lo, hi)
        if st != OK:
            return st, 0.0, 0.0, True
        pdeg[i0, j0] = 1
        poly[i0, j0, 0] = 0.0
        poly[i0, j0, 1] = 1.0

    exact = True
    for i in range(i0 + 1, n):
        for j in range(i + 1, n):
            affected = False
            for d in range(i0, i):
                if pdeg[d, i] != CONST or pdeg[d, j] != CONST:
                    affected = True
                    break
            if not affected:
                continue
            for k in range(maxdeg + 1):
                acc[k] = 0.0
                accabs[k] = 0.0
            deg = 0
            unknown = False
            for d in range(i):
                da = pdeg[d, i]
                db = pdeg[d, j]
                if da == CONST and db == CONST:
                    v = phi[d, i] * phi[d, j]
                    acc[0] += v
                    accabs[0] += abs(v)
                    continue
                if da == CONST:
                    a0 = phi[d, i]
                    if a0 == 0.0:
                        continue
                    if db == UNKNOWN:
                        unknown = True
                        break
                    for k in range(db + 1):
                        v = a0 * poly[d, j, k]
                        acc[k] += v
                        accabs[k] += abs(v)
                    if db > deg:
                        deg = db
                elif db == CONST:
                    b0 = phi[d, j]
                    if b0 == 0.0:
                        continue
                    if da == UNKNOWN:
                        unknown = True
                        break
                    for k in range(da + 1):
                        v = b0 * poly[d, i, k]
                        acc[k] += v
                        accabs[k] += abs(v)
                    if da > deg:
                        deg = da
                else:
                    if da == UNKNOWN or db == UNKNOWN or da + db > maxdeg:
                        unknown = True
                        break
                    for k in range(da + 1):
                        ak = poly[d, i, k]
                        if ak == 0.0:
                            continue
                        for m in range(db + 1):
                            v = ak * poly[d, j, m]
                            acc[k + m] += v
                            accabs[k + m] += abs(v)
                    if da + db > deg:
                        deg = da + db
            if unknown:
                # too high a degree to track: the bound is left to the
                # explicit feasibility check on the proposal
                exact = False
                if not adj[i, j]:
                    pdeg[i, j] = UNKNOWN
                continue
            deg = _trim(acc, accabs, deg)
            if adj[i, j]:
                if deg == 0:
                    continue
                acc[0] += phi[i, i] * phi[i, j]
                st, lo, hi = _update_bounds(acc, deg, zt, lo, hi)
                if st != OK:
                    return st, 0.0, 0.0, exact
            elif deg > 0:
                pdeg[i, j] = deg
                inv = -1.0 / phi[i, i]
                for k in range(deg + 1):
                    poly[i, j, k] = acc[k] * inv
    if diag:
        ylo = 1.0 / hi if hi < INF else 0.0
        yhi = 1.0 / lo if lo > 0.0 else INF
        return OK, ylo, yhi, exact
    return OK, lo, hi, exact


@njit(cache=True)
def free_support(phi, adj, i0, j0, truncated, poly, pdeg, acc, accabs):
    if truncated:
        return support_interval(phi, adj, i0, j0, poly, pdeg, acc, accabs)
    if i0 == j0:
        return OK, 0.0, INF, True
    return OK, -INF, INF, True


def workspace(n, maxdeg=MAXDEG):
    """Scratch arrays for :func:`support_interval`.

    ``maxdeg`` caps the tracked polynomial degree; it is read back from the
    shape of the returned coefficient array.
    """
    return (
        np.zeros((n, n, maxdeg + 1)),
        np.full((n, n), CONST, dtype=np.int64),
        np.zeros(2 * maxdeg + 1),
        np.zeros(2 * maxdeg + 1),
    )


# -- Metropolis-Hastings sweep ------------------------------------------------


@njit(cache=True)
def mh_sweep(phi, adj, nu, delta, D, truncated, fixed_first, sigma, counts,
             work, rowq, newq, poly, pdeg, acc, accabs):
    """One lexicographic sweep over the free entries of ``phi`` (in place).

    Target density on the free entries is proportional to
    ``prod_i phi_ii^(delta + nu_i - 1) * exp(-<phi' phi, D> / 2)``
    restricted to the cone (and to negative edge entries when truncated).
    Returns a status code; ``counts`` accumulates proposal/acceptance tallies.
    """
    n = phi.shape[0]
    # work mirrors phi outside the proposal; restored on rejection
    for r in range(n):
        rowq[r] = row_quad(phi, r, D)
        for c in range(n):
            work[r, c] = phi[r, c]
    for i in range(n):
        for j in range(i, n):
            if j != i and not adj[i, j]:
                continue
            if fixed_first and i == 0 and j == 0:
                continue
            st, lo, hi, exact = free_support(phi, adj, i, j, truncated,
                                             poly, pdeg, acc, accabs)
            if st != OK:
                return st
            if not exact:
                counts[C_INEXACT] += 1
            if i == j:
                counts[C_PROP_DIAG] += 1
            else:
                counts[C_PROP_OFF] += 1
            if hi - lo < 1e-12:
                counts[C_DEGENERATE] += 1
                continue
            cur = phi[i, j]
            if sigma == 0.0:
                prop = cur
            else:
                prop = tn_draw(cur, sigma, lo, hi)
            work[i, j] = prop
            complete_rows(work, adj, i)
            if truncated and not edges_negative(work, adj, i):
                counts[C_OUTSIDE] += 1
                for r in range(i, n):
                    for c in range(r, n):
                        work[r, c] = phi[r, c]
                continue
            dq = 0.0
            for r in range(i, n):
                changed = False
                for c in range(r, n):
                    if work[r, c] != phi[r, c]:
                        changed = True
                        break
                if changed:
                    newq[r] = row_quad(work, r, D)
                    dq += newq[r] - rowq[r]
                else:
                    newq[r] = rowq[r]
            logr = -0.5 * dq
            if sigma > 0.0:
                if i == j:
                    logr += (delta + nu[i] - 1.0) * (math.log(prop) - math.log(cur))
                logr += log_tn_mass(cur, sigma, lo, hi) - log_tn_mass(prop, sigma, lo, hi)
            if math.log(np.random.random()) < logr:
                for r in range(i, n):
                    for c in range(r, n):
                        phi[r, c] = work[r, c]
                    rowq[r] = newq[r]
                if i == j:
                    counts[C_ACC_DIAG] += 1
                else:
                    counts[C_ACC_OFF] += 1
            else:
                for r in range(i, n):
                    for c in range(r, n):
                        work[r, c] = phi[r, c]
    return OK


class SweepBuffers:
    """Preallocated scratch space for repeated sweeps on one graph size."""

    def __init__(self, n, maxdeg=MAXDEG):
        self.work = np.zeros((n, n))
        self.rowq = np.zeros(n)
        self.newq = np.zeros(n)
        self.poly, self.pdeg, self.acc, self.accabs = workspace(n, maxdeg)

    def args(self):
        return (self.work, self.rowq, self.newq, self.poly, self.pdeg,
                self.acc, self.accabs)


@njit(cache=True, nogil=True)
def run_chain(phi, adj, nu, delta, D, truncated, fixed_first, sigma,
              n_keep, thin, burn, seed, counts,
              work, rowq, newq, poly, pdeg, acc, accabs):
    """Run ``burn + n_keep * thin`` sweeps, storing ``phi`` after each thin block."""
    np.random.seed(seed)
    n = phi.shape[0]
    out = np.zeros((n_keep, n, n))
    for _ in range(burn):
        st = mh_sweep(phi, adj, nu, delta, D, truncated, fixed_first, sigma, counts,
                      work, rowq, newq, poly, pdeg, acc, accabs)
        if st != OK:
            return st, out
    for k in range(n_keep):
        for _ in range(thin):
            st = mh_sweep(phi, adj, nu, delta, D, truncated, fixed_first, sigma, counts,
                          work, rowq, newq, poly, pdeg, acc, accabs)
            if st != OK:
                return st, out
        out[k] = phi
    return OK, out


@njit(cache=True, nogil=True)
def ratio_chain(phi, adj, nu, delta, D, truncated, fixed_first, sigma, Ddiff,
                n_iter, burn, seed, counts,
                work, rowq, newq, poly, pdeg, acc, accabs):
    """log mean exp(Z) with ``Z = -<K, Ddiff>/2`` along a chain targeting ``D``.

    Returns ``(status, log_mean_exp, mean_Z)``.
    """
    np.random.seed(seed)
    for _ in range(burn):
        st = mh_sweep(phi, adj, nu, delta, D, truncated, fixed_first, sigma, counts,
                      work, rowq, newq, poly, pdeg, acc, accabs)
        if st != OK:
            return st, 0.0, 0.0
    zmax = -INF
    total = 0.0
    zsum = 0.0
    for _ in range(n_iter):
        st = mh_sweep(phi, adj, nu, delta, D, truncated, fixed_first, sigma, counts,
                      work, rowq, newq, poly, pdeg, acc, accabs)
        if st != OK:
            return st, 0.0, 0.0
        z = -0.5 * trace_KD(phi, Ddiff)
        zsum += z
        if z > zmax:
            total = total * math.exp(zmax - z) + 1.0
            zmax = z
        else:
            total += math.exp(z - zmax)
    return OK, zmax + math.log(total / n_iter), zsum / n_iter


# -- random-effect sweeps -----------------------------------------------------


@njit(cache=True)
def u_sweep(u, offset, y, E, K, Kr, tau2, s_u, use_lik):
    """Single-site random-walk updates of ``u`` (univariate model).

    ``offset`` is the covariate part of the log relative risk and ``Kr``
    holds ``K @ (u - alpha)``, kept current in place. Returns acceptances.
    """
    n = u.shape[0]
    n_acc = 0
    for i in range(n):
        step = s_u * np.random.standard_normal()
        logr = -0.5 * tau2 * (2.0 * step * Kr[i] + step * step * K[i, i])
        if use_lik:
            eta = offset[i] + u[i]
            logr += y[i] * step - E[i] * math.exp(eta) * (math.exp(step) - 1.0)
        if math.log(np.random.random()) < logr:
            u[i] += step
            for k in range(n):
                Kr[k] += step * K[k, i]
            n_acc += 1
    return n_acc


@njit(cache=True)
def U_sweep(U, Y, E, observed, KR, KC, A, s_u, use_lik):
    """Single-site updates of the n x C random-effect matrix ``U``.

    ``A`` holds ``KR @ (U - 1 M') @ KC`` and is kept current in place.
    Cells without likelihood (held out, or ``use_lik`` off) have a normal
    full conditional and are drawn from it exactly; the rest get random-walk
    Metropolis steps.
    """
    n, C = U.shape
    n_acc = 0
    for i in range(n):
        for c in range(C):
            q = KR[i, i] * KC[c, c]
            if use_lik and observed[i, c]:
                step = s_u * np.random.standard_normal()
                logr = -0.5 * (2.0 * step * A[i, c] + step * step * q)
                logr += Y[i, c] * step - E[i, c] * math.exp(U[i, c]) * (math.exp(step) - 1.0)
                accept = math.log(np.random.random()) < logr
            else:
                step = -A[i, c] / q + np.random.standard_normal() / math.sqrt(q)
                accept = True
            if accept:
                U[i, c] += step
                for a in range(n):
                    kra = KR[a, i] * step
                    if kra == 0.0:
                        continue
                    for b in range(C):
                        A[a, b] += kra * KC[c, b]
                n_acc += 1
    return n_acc
