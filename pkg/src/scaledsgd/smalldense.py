"""Small dense linear algebra for r x r and thin k x r matrices.

The ``_``-prefixed kernels are numba-compiled and report failure through a
boolean so they can be called from inside the compiled SGD loops; the public
wrappers copy their inputs and raise instead.
"""
import numpy as np
from numba import njit

from .errors import NotPositiveDefinite, SingularUpdate

# pivot <= PIVOT_RTOL * max(diag) counts as non-positive
PIVOT_RTOL = 1e-13
SM_MIN_DENOM = 1e-14


@njit(cache=True)
def _gram(M, out):
    k, r = M.shape
    for a in range(r):
        for c in range(a, r):
            s = 0.0
            for i in range(k):
                s += M[i, a] * M[i, c]
            out[a, c] = s
            out[c, a] = s


@njit(cache=True)
def _gram_accumulate(M, nrows, sign, out):
    # out += sign * M[:nrows].T @ M[:nrows]
    r = M.shape[1]
    for a in range(r):
        for c in range(a, r):
            s = 0.0
            for i in range(nrows):
                s += M[i, a] * M[i, c]
            out[a, c] += sign * s
            if c != a:
                out[c, a] += sign * s


@njit(cache=True)
def _cholesky(A, C):
    """Lower Cholesky factor of ``A`` into ``C``; False on a non-positive pivot."""
    r = A.shape[0]
    dmax = 0.0
    for a in range(r):
        if A[a, a] > dmax:
            dmax = A[a, a]
    if not dmax > 0.0:
        return False
    tol = PIVOT_RTOL * dmax
    for j in range(r):
        s = A[j, j]
        for k in range(j):
            s -= C[j, k] * C[j, k]
        if not s > tol:
            return False
        d = np.sqrt(s)
        C[j, j] = d
        for i in range(j + 1, r):
            s = A[i, j]
            for k in range(j):
                s -= C[i, k] * C[j, k]
            C[i, j] = s / d
        for i in range(j):
            C[i, j] = 0.0
    return True


@njit(cache=True)
def _cholesky_solve_rows(C, B, nrows, X):
    """Rows of ``X`` solve ``x A = b`` for the rows of ``B``, with ``A = C C^T``."""
    r = C.shape[0]
    for row in range(nrows):
        # forward: C y = b
        for i in range(r):
            s = B[row, i]
            for k in range(i):
                s -= C[i, k] * X[row, k]
            X[row, i] = s / C[i, i]
        # backward: C^T x = y
        for i in range(r - 1, -1, -1):
            s = X[row, i]
            for k in range(i + 1, r):
                s -= C[k, i] * X[row, k]
            X[row, i] = s / C[i, i]


@njit(cache=True)
def _spd_inverse(A, C, out):
    r = A.shape[0]
    if not _cholesky(A, C):
        return False
    eye = np.eye(r)
    _cholesky_solve_rows(C, eye, r, out)
    # symmetrize the rounding
    for a in range(r):
        for c in range(a + 1, r):
            v = 0.5 * (out[a, c] + out[c, a])
            out[a, c] = v
            out[c, a] = v
    return True


@njit(cache=True)
def _rank1_inv_update(Ainv, u, alpha, out):
    """``out = (A + alpha u u^T)^{-1}`` given ``Ainv = A^{-1}``; False if singular."""
    r = Ainv.shape[0]
    v = np.zeros(r)
    w = np.zeros(r)
    for a in range(r):
        sv = 0.0
        sw = 0.0
        for c in range(r):
            sv += Ainv[a, c] * u[c]
            sw += Ainv[c, a] * u[c]
        v[a] = sv
        w[a] = sw
    q = 0.0
    for a in range(r):
        q += u[a] * v[a]
    denom = 1.0 + alpha * q
    if abs(denom) < SM_MIN_DENOM:
        return False
    f = alpha / denom
    for a in range(r):
        for c in range(r):
            out[a, c] = Ainv[a, c] - f * v[a] * w[c]
    return True


def gram(M):
    """Return ``M.T @ M`` (exactly symmetric)."""
    M = np.ascontiguousarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] < 1:
        raise ValueError(f"expected a k x r matrix with r >= 1, got shape {M.shape}")
    out = np.zeros((M.shape[1], M.shape[1]))
    _gram(M, out)
    return out


def cholesky(A):
    A = np.ascontiguousarray(A, dtype=np.float64)
    C = np.zeros_like(A)
    if not _cholesky(A, C):
        raise NotPositiveDefinite("matrix is not positive definite (non-positive pivot)")
    return C


def spd_solve(A, B):
    """Solve ``X @ A = B`` for SPD ``A``; ``B`` may be a vector or a k x r matrix.

    Raises NotPositiveDefinite when the factorization meets a non-positive
    pivot.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    vector = B.ndim == 1
    B2 = np.ascontiguousarray(np.atleast_2d(B))
    if A.ndim != 2 or A.shape[0] != A.shape[1] or B2.shape[1] != A.shape[0]:
        raise ValueError(f"shape mismatch: A {A.shape}, B {B.shape}")
    C = cholesky(A)
    X = np.empty_like(B2)
    _cholesky_solve_rows(C, B2, B2.shape[0], X)
    return X[0] if vector else X


def spd_inverse(A):
    A = np.ascontiguousarray(A, dtype=np.float64)
    out = np.empty_like(A)
    if not _spd_inverse(A, np.zeros_like(A), out):
        raise NotPositiveDefinite("matrix is not positive definite (non-positive pivot)")
    return out


def rank1_inv_update(Ainv, u, alpha=1.0):
    """Sherman-Morrison: ``(A + alpha u u^T)^{-1}`` from ``A^{-1}`` in O(r^2).

    Raises SingularUpdate when ``|1 + alpha u^T A^{-1} u| < 1e-14``; the
    caller should then rebuild the inverse from scratch.
    """
    Ainv = np.ascontiguousarray(Ainv, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64).ravel()
    out = np.empty_like(Ainv)
    if not _rank1_inv_update(Ainv, u, float(alpha), out):
        raise SingularUpdate("Sherman-Morrison denominator vanished")
    return out
