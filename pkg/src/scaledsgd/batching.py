"""Per-step completion subproblem: batch index maps and the sparse residual.

A batch of b known entries touches b_L unique rows of L and b_R unique rows
of R.  The residual lives only on the b batch entries, so everything here is
O(b r) apart from the O(b log b) sort that finds the unique rows.
"""
from dataclasses import dataclass

import numpy as np
from numba import njit


@njit(cache=True)
def _index_map(idx, nb, uniq, local):
    """Sorted unique values of ``idx[:nb]`` into ``uniq``; positions into ``local``.

    Returns the number of unique values.
    """
    order = np.argsort(idx[:nb], kind="mergesort")
    count = 0
    prev = -1
    for p in range(nb):
        k = order[p]
        v = idx[k]
        if count == 0 or v != prev:
            uniq[count] = v
            count += 1
            prev = v
        local[k] = count - 1
    return count


@njit(cache=True)
def _residual(li, lj, vals, Lb, Rb, nb, out):
    r = Lb.shape[1]
    for k in range(nb):
        a = li[k]
        c = lj[k]
        s = 0.0
        for q in range(r):
            s += Lb[a, q] * Rb[c, q]
        out[k] = s - vals[k]


@njit(cache=True)
def _residual_product(res, out_idx, in_idx, F, nb, nout, out):
    # out[out_idx[k]] += res[k] * F[in_idx[k]]
    r = F.shape[1]
    for a in range(nout):
        for q in range(r):
            out[a, q] = 0.0
    for k in range(nb):
        a = out_idx[k]
        c = in_idx[k]
        s = res[k]
        for q in range(r):
            out[a, q] += s * F[c, q]


@dataclass(frozen=True, eq=False)
class Batch:
    rows: np.ndarray        # global row index per entry, input order
    cols: np.ndarray
    values: np.ndarray
    row_map: np.ndarray     # sorted unique global rows (length b_L)
    col_map: np.ndarray     # sorted unique global cols (length b_R)
    local_rows: np.ndarray  # position of rows[k] in row_map
    local_cols: np.ndarray

    @property
    def size(self):
        return int(self.values.size)

    @property
    def b_L(self):
        return int(self.row_map.size)

    @property
    def b_R(self):
        return int(self.col_map.size)

    @property
    def global_entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    @property
    def omega_b(self):
        return list(zip(self.local_rows.tolist(), self.local_cols.tolist()))

    def dense_residual(self, res):
        """S_b as a dense b_L x b_R matrix (tests and debugging only)."""
        S = np.zeros((self.b_L, self.b_R))
        S[self.local_rows, self.local_cols] = res
        return S


def build_batch(entries):
    """Build the local subproblem for a list of ``(i, j, value)`` entries."""
    entries = list(entries)
    if not entries:
        raise ValueError("a batch needs at least one entry")
    i, j, v = zip(*entries)
    return batch_from_arrays(np.array(i), np.array(j), np.array(v, dtype=np.float64))


def batch_from_arrays(rows, cols, values):
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    nb = rows.size
    row_map = np.empty(nb, np.int64)
    col_map = np.empty(nb, np.int64)
    li = np.empty(nb, np.int64)
    lj = np.empty(nb, np.int64)
    bl = _index_map(rows, nb, row_map, li)
    br = _index_map(cols, nb, col_map, lj)
    return Batch(rows, cols, values, row_map[:bl].copy(), col_map[:br].copy(), li, lj)


def residual(batch, L_b, R_b):
    """``s_k = <L_b[local_i], R_b[local_j]> - x_k`` for every batch entry."""
    L_b = np.ascontiguousarray(L_b, dtype=np.float64)
    R_b = np.ascontiguousarray(R_b, dtype=np.float64)
    out = np.empty(batch.size)
    _residual(batch.local_rows, batch.local_cols, batch.values, L_b, R_b, batch.size, out)
    return out


def residual_times_factor(res, batch, F, side):
    """``S_b @ R_b`` (side="left", F = R_b) or ``S_b.T @ L_b`` (side="right", F = L_b)."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    res = np.ascontiguousarray(res, dtype=np.float64)
    if side == "left":
        out = np.empty((batch.b_L, F.shape[1]))
        _residual_product(res, batch.local_rows, batch.local_cols, F, batch.size, batch.b_L, out)
    elif side == "right":
        out = np.empty((batch.b_R, F.shape[1]))
        _residual_product(res, batch.local_cols, batch.local_rows, F, batch.size, batch.b_R, out)
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return out
