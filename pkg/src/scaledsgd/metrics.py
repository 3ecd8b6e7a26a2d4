"""Training loss, stopping rule and held-out evaluation."""
import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .errors import EmptyTestSet, ZeroData

MSE_TOL = 1e-8
REL_RES_TOL = 1e-4
MAX_ITERS = 100


@njit(cache=True)
def _entry_residuals(L, R, rows, cols, vals, out):
    r = L.shape[1]
    for k in range(rows.size):
        i = rows[k]
        j = cols[k]
        s = 0.0
        for q in range(r):
            s += L[i, q] * R[j, q]
        out[k] = s - vals[k]


@njit(cache=True)
def _half_sq_sum(res):
    s = 0.0
    for k in range(res.size):
        s += res[k] * res[k]
    return 0.5 * s


def residuals(factors, data):
    """``<L_i, R_j> - x_ij`` for every known entry, in ``data`` order."""
    out = np.empty(data.nnz)
    _entry_residuals(factors.L, factors.R, data.rows, data.cols, data.values, out)
    return out


class Cost(NamedTuple):
    cost: float
    mse: float
    rel_residual: float


def train_cost(factors, data, relative=True):
    """Half squared error on the known entries, with MSE and relative residual.

    ``mse = 2 cost / |Omega|`` and ``rel_residual = sqrt(2 cost) / ||P_Omega(X*)||_F``.
    """
    if data.nnz == 0:
        raise ZeroData("no known entries")
    cost = _half_sq_sum(residuals(factors, data))
    mse = 2.0 * cost / data.nnz
    rel = math.nan
    if relative:
        norm = data.norm()
        if norm == 0.0:
            raise ZeroData("relative residual undefined for all-zero data")
        rel = math.sqrt(2.0 * cost) / norm
    return Cost(cost, mse, rel)


def regularized_cost(factors, data, lam):
    """Training cost plus ``lam/2 (||L||_F^2 + ||R||_F^2)``."""
    c = train_cost(factors, data, relative=False).cost
    if lam:
        c += 0.5 * lam * (np.sum(factors.L**2) + np.sum(factors.R**2))
    return c


def heldout_mse(factors, test):
    if test.nnz == 0:
        raise EmptyTestSet("test set is empty")
    res = residuals(factors, test)
    return float(np.dot(res, res) / test.nnz)


def heldout_rel_residual(factors, test):
    if test.nnz == 0:
        raise EmptyTestSet("test set is empty")
    return float(np.linalg.norm(residuals(factors, test)) / test.norm())


def nmae(factors, test, rating_spread=20.0):
    """Mean absolute test error divided by the rating spread (unclipped predictions)."""
    if rating_spread <= 0:
        raise ValueError("rating_spread must be positive")
    if test.nnz == 0:
        raise EmptyTestSet("test set is empty")
    return float(np.mean(np.abs(residuals(factors, test))) / rating_spread)


class Verdict(enum.Enum):
    CONTINUE = "continue"
    MSE_REACHED = "mse_reached"
    RESIDUAL_REACHED = "residual_reached"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"

    @property
    def stops(self):
        return self is not Verdict.CONTINUE


@dataclass(frozen=True)
class StopState:
    mse: float
    rel_residual: float
    iters_done: int
    verdict: Verdict


def stop_state(mse, rel_residual, iters_done, max_iters=MAX_ITERS,
               mse_tol=MSE_TOL, rel_res_tol=REL_RES_TOL):
    """Stopping verdict after ``iters_done`` completed iterations.

    Thresholds are strict; the MSE test wins when both hold.  A non-finite
    loss stops the run as DIVERGED.
    """
    if not (math.isfinite(mse) and (math.isfinite(rel_residual) or math.isnan(rel_residual))):
        verdict = Verdict.DIVERGED
    elif mse < mse_tol:
        verdict = Verdict.MSE_REACHED
    elif rel_residual < rel_res_tol:
        verdict = Verdict.RESIDUAL_REACHED
    elif iters_done >= max_iters:
        verdict = Verdict.MAX_ITERS
    else:
        verdict = Verdict.CONTINUE
    return StopState(mse, rel_residual, iters_done, verdict)
