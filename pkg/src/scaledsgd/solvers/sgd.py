"""Scaled and plain stochastic gradient steps on X = L R^T.

For a batch touching rows L_b, R_b with sparse residual S_b, the scaled step is

    L_b <- L_b - t (S_b R_b) P_R^{-1},   P_R = (b mu / max(m, n)) R^T R + (1 - mu) R_b^T R_b
    R_b <- R_b - t (S_b^T L_b) P_L^{-1}, P_L = (b mu / max(m, n)) L^T L + (1 - mu) L_b^T L_b

with both lines reading the pre-step L_b, R_b.  The plain step drops P_R, P_L.
The Gram matrices L^T L and R^T R are maintained by rank-b_L / rank-b_R deltas.
With b = 1 and mu > 0, P_R^{-1} is a Sherman-Morrison update of (R^T R)^{-1},
which is itself maintained by two rank-1 updates per step, so a step is O(r^2).
"""
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import gammaln

from .. import smalldense as sd
from ..batching import _index_map, _residual, _residual_product
from ..errors import DegenerateDirection, NotPositiveDefinite
from ..metrics import residuals

OK = 0
NOT_PD_RIGHT = 1   # P_R (preconditioner of the L update) failed
NOT_PD_LEFT = 2    # P_L failed
NON_FINITE = 3


@njit(cache=True)
def _alloc(b, r):
    return (
        np.empty(b, np.int64), np.empty(b, np.int64),    # row_map, col_map
        np.empty(b, np.int64), np.empty(b, np.int64),    # local rows / cols
        np.empty((b, r)), np.empty((b, r)),              # L_b, R_b
        np.empty(b),                                     # residual
        np.empty((b, r)), np.empty((b, r)),              # S_b R_b, S_b^T L_b
        np.empty((b, r)), np.empty((b, r)),              # scaled directions
        np.empty((r, r)), np.empty((r, r)),              # P, Cholesky factor
    )


@njit(cache=True)
def _precondition(g, gb, nb_rows, coef, local_w, P, C, G, nrows, D):
    """D[:nrows] = G[:nrows] @ (coef g + local_w gb[:nb_rows]^T gb[:nb_rows])^{-1}."""
    r = g.shape[0]
    for a in range(r):
        for c in range(r):
            P[a, c] = coef * g[a, c]
    if local_w != 0.0:
        _gram_into(gb, nb_rows, C)
        for a in range(r):
            for c in range(r):
                P[a, c] += local_w * C[a, c]
    if not sd._cholesky(P, C):
        return False
    sd._cholesky_solve_rows(C, G, nrows, D)
    return True


@njit(cache=True)
def _gram_into(M, nrows, out):
    r = M.shape[1]
    for a in range(r):
        for c in range(a, r):
            s = 0.0
            for i in range(nrows):
                s += M[i, a] * M[i, c]
            out[a, c] = s
            out[c, a] = s


@njit(cache=True)
def _step(L, R, gL, gR, rows, cols, vals, nb, t, mu, inv_maxdim, scaled, work):
    (row_map, col_map, li, lj, Lb, Rb, res, GL, GR, DL, DR, P, C) = work
    r = L.shape[1]
    bl = _index_map(rows, nb, row_map, li)
    br = _index_map(cols, nb, col_map, lj)
    for a in range(bl):
        for q in range(r):
            Lb[a, q] = L[row_map[a], q]
    for c in range(br):
        for q in range(r):
            Rb[c, q] = R[col_map[c], q]
    _residual(li, lj, vals, Lb, Rb, nb, res)
    for k in range(nb):
        if not np.isfinite(res[k]):
            return NON_FINITE
    _residual_product(res, li, lj, Rb, nb, bl, GL)
    _residual_product(res, lj, li, Lb, nb, br, GR)
    if scaled:
        coef = nb * mu * inv_maxdim
        if not _precondition(gR, Rb, br, coef, 1.0 - mu, P, C, GL, bl, DL):
            return NOT_PD_RIGHT
        if not _precondition(gL, Lb, bl, coef, 1.0 - mu, P, C, GR, br, DR):
            return NOT_PD_LEFT
        # gram delta: remove old rows, write new rows, add them back
        sd._gram_accumulate(Lb, bl, -1.0, gL)
        sd._gram_accumulate(Rb, br, -1.0, gR)
    else:
        DL = GL
        DR = GR
    for a in range(bl):
        for q in range(r):
            Lb[a, q] -= t * DL[a, q]
            L[row_map[a], q] = Lb[a, q]
    for c in range(br):
        for q in range(r):
            Rb[c, q] -= t * DR[c, q]
            R[col_map[c], q] = Rb[c, q]
    if scaled:
        sd._gram_accumulate(Lb, bl, 1.0, gL)
        sd._gram_accumulate(Rb, br, 1.0, gR)
    return OK


@njit(cache=True)
def _sm_direction(ginv, coef, u, local_w, s, D, tmp):
    """D = s u^T (coef g + local_w u u^T)^{-1} via Sherman-Morrison on g^{-1}/coef."""
    r = u.size
    for a in range(r):
        for c in range(r):
            tmp[a, c] = ginv[a, c] / coef
    P = np.empty((r, r))
    if not sd._rank1_inv_update(tmp, u, local_w, P):
        return False
    for c in range(r):
        acc = 0.0
        for a in range(r):
            acc += u[a] * P[a, c]
        D[c] = s * acc
    return True


@njit(cache=True)
def _refresh_inverse(g, ginv):
    C = np.empty_like(g)
    return sd._spd_inverse(g, C, ginv)


@njit(cache=True)
def _maintain_inverse(g, ginv, old, new):
    # add the new row first: a positive rank-1 update never loses definiteness
    r = old.size
    tmp = np.empty((r, r))
    if sd._rank1_inv_update(ginv, new, 1.0, tmp) and sd._rank1_inv_update(tmp, old, -1.0, ginv):
        return True
    return _refresh_inverse(g, ginv)


@njit(cache=True)
def _step_b1(L, R, gL, gR, gLinv, gRinv, i, j, x, t, mu, inv_maxdim):
    r = L.shape[1]
    l_old = L[i].copy()
    r_old = R[j].copy()
    s = 0.0
    for q in range(r):
        s += l_old[q] * r_old[q]
    s -= x
    if not np.isfinite(s):
        return NON_FINITE
    coef = mu * inv_maxdim
    DL = np.empty(r)
    DR = np.empty(r)
    tmp = np.empty((r, r))
    if not _sm_direction(gRinv, coef, r_old, 1.0 - mu, s, DL, tmp):
        return NOT_PD_RIGHT
    if not _sm_direction(gLinv, coef, l_old, 1.0 - mu, s, DR, tmp):
        return NOT_PD_LEFT
    l_new = l_old - t * DL
    r_new = r_old - t * DR
    L[i] = l_new
    R[j] = r_new
    for a in range(r):
        for c in range(r):
            gL[a, c] += l_new[a] * l_new[c] - l_old[a] * l_old[c]
            gR[a, c] += r_new[a] * r_new[c] - r_old[a] * r_old[c]
    if not _maintain_inverse(gL, gLinv, l_old, l_new):
        return NOT_PD_LEFT
    if not _maintain_inverse(gR, gRinv, r_old, r_new):
        return NOT_PD_RIGHT
    return OK


@njit(cache=True)
def _epoch(L, R, gL, gR, gLinv, gRinv, rows, cols, vals, order, b, t, mu,
           inv_maxdim, scaled, fast_b1, refresh_each_step):
    """One pass over ``order`` in consecutive batches of ``b``.

    Returns ``(status, batches_done)``.
    """
    total = order.size
    r = L.shape[1]
    work = _alloc(b, r)
    br_rows = np.empty(b, np.int64)
    br_cols = np.empty(b, np.int64)
    br_vals = np.empty(b)
    done = 0
    for start in range(0, total, b):
        nb = min(b, total - start)
        if fast_b1 and nb == 1:
            k = order[start]
            status = _step_b1(L, R, gL, gR, gLinv, gRinv, rows[k], cols[k], vals[k],
                              t, mu, inv_maxdim)
        else:
            for p in range(nb):
                k = order[start + p]
                br_rows[p] = rows[k]
                br_cols[p] = cols[k]
                br_vals[p] = vals[k]
            status = _step(L, R, gL, gR, br_rows, br_cols, br_vals, nb, t, mu,
                           inv_maxdim, scaled, work)
        if status != OK:
            return status, done
        if refresh_each_step and scaled:
            sd._gram(L, gL)
            sd._gram(R, gR)
            if fast_b1:
                if not _refresh_inverse(gL, gLinv):
                    return NOT_PD_LEFT, done
                if not _refresh_inverse(gR, gRinv):
                    return NOT_PD_RIGHT, done
        done += 1
    return OK, done


@dataclass
class GramCache:
    """L^T L and R^T R, kept current by per-step deltas.

    ``gL_inv``/``gR_inv`` are only maintained on the b = 1 fast path.
    """

    gL: np.ndarray
    gR: np.ndarray
    staleness: int = 0
    gL_inv: np.ndarray = None
    gR_inv: np.ndarray = None

    @classmethod
    def from_factors(cls, factors, with_inverse=False):
        cache = cls(np.zeros((factors.rank,) * 2), np.zeros((factors.rank,) * 2))
        cache.refresh(factors, with_inverse)
        return cache

    def refresh(self, factors, with_inverse=None):
        sd._gram(factors.L, self.gL)
        sd._gram(factors.R, self.gR)
        self.staleness = 0
        if with_inverse is None:
            with_inverse = self.gL_inv is not None
        if with_inverse:
            self.gL_inv = sd.spd_inverse(self.gL)
            self.gR_inv = sd.spd_inverse(self.gR)
        else:
            self.gL_inv = self.gR_inv = None


def _raise_for(status, mu, context=""):
    where = f" ({context})" if context else ""
    if status == NOT_PD_RIGHT:
        side = "right preconditioner (b mu/max(m,n)) R^T R + (1-mu) R_b^T R_b"
    elif status == NOT_PD_LEFT:
        side = "left preconditioner (b mu/max(m,n)) L^T L + (1-mu) L_b^T L_b"
    else:
        raise FloatingPointError(f"non-finite residual encountered{where}")
    hint = ""
    if mu == 0:
        hint = "; with mu = 0 the batch must touch at least r distinct rows and columns, use mu > 0"
    raise NotPositiveDefinite(f"{side} is not positive definite{where}{hint}")


def _inv_maxdim(factors):
    return 1.0 / max(factors.L.shape[0], factors.R.shape[0])


def scaled_sgd_step(factors, cache, batch, t, mu):
    """One scaled step on ``batch``; updates factors and cache in place.

    Returns the Gram deltas ``(dgL, dgR)`` that were applied to the cache.
    """
    work = _alloc(batch.size, factors.rank)
    gL0, gR0 = cache.gL.copy(), cache.gR.copy()
    status = _step(factors.L, factors.R, cache.gL, cache.gR, batch.rows, batch.cols,
                   batch.values, batch.size, float(t), float(mu), _inv_maxdim(factors), True, work)
    if status != OK:
        _raise_for(status, mu)
    cache.staleness += 1
    return cache.gL - gL0, cache.gR - gR0


def sgd_step(factors, batch, t):
    """One plain (Euclidean) step on ``batch``; updates factors in place."""
    work = _alloc(batch.size, factors.rank)
    dummy = np.zeros((factors.rank, factors.rank))
    status = _step(factors.L, factors.R, dummy, dummy, batch.rows, batch.cols, batch.values,
                   batch.size, float(t), 0.0, _inv_maxdim(factors), False, work)
    if status != OK:
        _raise_for(status, 0.0)


def scaled_sgd_step_b1(factors, cache, entry, t, mu):
    """Single-entry scaled step through the Sherman-Morrison path.

    ``cache`` must carry the Gram inverses (``GramCache.from_factors(f, with_inverse=True)``).
    """
    if mu <= 0:
        raise ValueError("the rank-1 path needs mu > 0")
    if cache.gL_inv is None:
        raise ValueError("cache has no Gram inverses")
    i, j, x = entry
    status = _step_b1(factors.L, factors.R, cache.gL, cache.gR, cache.gL_inv, cache.gR_inv,
                      int(i), int(j), float(x), float(t), float(mu), _inv_maxdim(factors))
    if status != OK:
        _raise_for(status, mu)
    cache.staleness += 1


def run_epoch(factors, cache, data, order, b, t, mu, scaled=True, fast_b1=False,
              refresh_each_step=False):
    """Visit ``data`` entries in ``order`` with batches of ``b``; returns the kernel status.

    Non-positive-definite preconditioners raise; a non-finite residual
    (divergence) is reported through the returned status.
    """
    fast_b1 = bool(fast_b1 and scaled and b == 1 and mu > 0)
    if fast_b1 and cache.gL_inv is None:
        cache.refresh(factors, with_inverse=True)
    empty = np.zeros((0, 0))
    status, done = _epoch(
        factors.L, factors.R, cache.gL, cache.gR,
        cache.gL_inv if fast_b1 else empty, cache.gR_inv if fast_b1 else empty,
        data.rows, data.cols, data.values, np.ascontiguousarray(order, dtype=np.int64),
        int(b), float(t), float(mu), _inv_maxdim(factors), bool(scaled), fast_b1,
        bool(refresh_each_step),
    )
    cache.staleness += done
    if status in (NOT_PD_LEFT, NOT_PD_RIGHT):
        _raise_for(status, mu, f"after {done} batches")
    return status


def inclusion_probability(degree, total, b):
    """Probability that a uniformly drawn batch of ``b`` of ``total`` entries hits a
    row holding ``degree`` of them (sampling without replacement)."""
    degree = np.asarray(degree, dtype=np.float64)
    free = total - degree
    with np.errstate(divide="ignore", invalid="ignore"):
        log_miss = (gammaln(free + 1) - gammaln(free - b + 1)
                    - gammaln(total + 1) + gammaln(total - b + 1))
    p = np.where(free >= b, -np.expm1(log_miss), 1.0)
    return np.where(degree > 0, p, 0.0)


def full_direction(factors, data, mu, b, scaled=True):
    """Epoch-aggregate update direction ``(D_L, D_R)`` for a pass with batches of ``b``.

    The full gradient is preconditioned with the expected per-step matrix
    ``(b mu / max(m, n)) R^T R + (1 - mu) E[R_b^T R_b]``, where the expectation
    over uniform batches weights row j of R by its inclusion probability.  For
    ``b = |Omega|`` this is the single full-batch step.  The step is
    ``(L - t D_L, R - t D_R)``.  Also returns the residual on the known entries.
    """
    L, R = factors.L, factors.R
    n, m = L.shape[0], R.shape[0]
    res = residuals(factors, data)
    GL = np.zeros_like(L)
    GR = np.zeros_like(R)
    np.add.at(GL, data.rows, res[:, None] * R[data.cols])
    np.add.at(GR, data.cols, res[:, None] * L[data.rows])
    if not scaled:
        return GL, GR, res
    coef = b * mu / max(m, n)
    wL = inclusion_probability(np.bincount(data.rows, minlength=n), data.nnz, b)
    wR = inclusion_probability(np.bincount(data.cols, minlength=m), data.nnz, b)
    PR = coef * sd.gram(R) + (1 - mu) * (R.T * wR) @ R
    PL = coef * sd.gram(L) + (1 - mu) * (L.T * wL) @ L
    return sd.spd_solve(PR, GL), sd.spd_solve(PL, GR), res


def initial_stepsize(factors, data, mu, b, scaled=True):
    """Minimizer of the linearized cost along the epoch-aggregate update direction.

    ``t0 = <res, Delta> / ||Delta||^2`` with ``Delta = P_Omega(D_L R^T + L D_R^T)``.
    Raises DegenerateDirection when ``||Delta||^2 < 1e-30`` or ``t0 <= 0``.
    """
    DL, DR, res = full_direction(factors, data, mu, b, scaled)
    L, R = factors.L, factors.R
    delta = (np.einsum("ij,ij->i", DL[data.rows], R[data.cols])
             + np.einsum("ij,ij->i", L[data.rows], DR[data.cols]))
    denom = float(np.dot(delta, delta))
    if not denom >= 1e-30:
        raise DegenerateDirection(f"linearized direction has squared norm {denom:.3g}")
    t0 = float(np.dot(res, delta)) / denom
    if not t0 > 0:
        raise DegenerateDirection(f"linearized stepsize {t0:.3g} is not positive")
    return t0
