"""Alternating least squares and CCD++ baselines.

Both minimize ``1/2 ||P_Omega(L R^T - X*)||_F^2 + lam/2 (||L||_F^2 + ||R||_F^2)``
by exact block or coordinate minimization, so that objective never increases.
"""
import numpy as np
from numba import njit

from .. import smalldense as sd
from ..errors import NotPositiveDefinite


def _compressed(index, size):
    """CSR-style ``(indptr, perm)`` grouping entry positions by ``index``."""
    perm = np.argsort(index, kind="stable")
    indptr = np.zeros(size + 1, dtype=np.int64)
    np.cumsum(np.bincount(index, minlength=size), out=indptr[1:])
    return indptr, perm


@njit(cache=True)
def _als_half(indptr, perm, other_idx, vals, F, lam, order, out):
    """Row-wise ridge solves; returns -1 on success or the failing row."""
    r = F.shape[1]
    A = np.empty((r, r))
    C = np.empty((r, r))
    rhs = np.empty((1, r))
    x = np.empty((1, r))
    for p in range(order.size):
        i = order[p]
        for a in range(r):
            rhs[0, a] = 0.0
            for c in range(r):
                A[a, c] = 0.0
            A[a, a] = lam
        for e in range(indptr[i], indptr[i + 1]):
            k = perm[e]
            j = other_idx[k]
            v = vals[k]
            for a in range(r):
                fa = F[j, a]
                rhs[0, a] += v * fa
                for c in range(r):
                    A[a, c] += fa * F[j, c]
        if indptr[i + 1] == indptr[i] and lam > 0:
            for a in range(r):
                out[i, a] = 0.0
            continue
        if not sd._cholesky(A, C):
            return i
        sd._cholesky_solve_rows(C, rhs, 1, x)
        for a in range(r):
            out[i, a] = x[0, a]
    return -1


class ALSIndex:
    """Row and column groupings of a data set, built once per run."""

    def __init__(self, data):
        self.data = data
        self.row_ptr, self.row_perm = _compressed(data.rows, data.n)
        self.col_ptr, self.col_perm = _compressed(data.cols, data.m)


def als_sweep(factors, data, regularization=0.0, rng=None, index=None):
    """Solve every row of L in closed form, then every row of R against the new L.

    Rows are visited in a uniformly shuffled order when ``rng`` is given.
    """
    index = index or ALSIndex(data)
    lam = float(regularization)
    for side in ("L", "R"):
        if side == "L":
            ptr, perm, other, F, out = index.row_ptr, index.row_perm, data.cols, factors.R, factors.L
        else:
            ptr, perm, other, F, out = index.col_ptr, index.col_perm, data.rows, factors.L, factors.R
        count = out.shape[0]
        order = rng.permutation(count) if rng is not None else np.arange(count)
        bad = _als_half(ptr, perm, other, data.values, F, lam, order.astype(np.int64), out)
        if bad >= 0:
            raise NotPositiveDefinite(
                f"ALS normal equations for {side} row {bad} are singular; "
                f"it has {ptr[bad + 1] - ptr[bad]} observations for rank {F.shape[1]}, use regularization > 0"
            )
    return factors


def _coordinate_update(res_plus, idx, other_idx, other, cur, lam, size):
    # u_i = sum_j res_ij v_j / (lam + sum_j v_j^2) over the known entries of row i
    num = np.bincount(idx, weights=res_plus * other[other_idx], minlength=size)
    den = lam + np.bincount(idx, weights=other[other_idx] ** 2, minlength=size)
    out = cur.copy()
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def ccdpp_sweep(factors, data, T=5, regularization=0.0, residual=None):
    """One CCD++ outer iteration: refit each rank-1 factor with ``T`` inner passes.

    ``residual`` (``x - <L_i, R_j>`` on the known entries) is updated in place
    when given, otherwise it is recomputed.  Returns the residual.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    L, R = factors.L, factors.R
    rows, cols = data.rows, data.cols
    if residual is None:
        residual = data.values - np.einsum("ij,ij->i", L[rows], R[cols])
    lam = float(regularization)
    for k in range(L.shape[1]):
        u = L[:, k].copy()
        v = R[:, k].copy()
        # add factor k back: res_plus is the target of the rank-1 subproblem
        res_plus = residual + u[rows] * v[cols]
        for _ in range(T):
            u = _coordinate_update(res_plus, rows, cols, v, u, lam, data.n)
            v = _coordinate_update(res_plus, cols, rows, u, v, lam, data.m)
        L[:, k] = u
        R[:, k] = v
        residual[:] = res_plus - u[rows] * v[cols]
    return residual
