"""The factor pair (L, R) with X = L R^T, its gauge action and initializers."""
from dataclasses import dataclass

import numpy as np

from .errors import SingularGauge


@dataclass
class FactorPair:
    L: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.L = np.ascontiguousarray(self.L, dtype=np.float64)
        self.R = np.ascontiguousarray(self.R, dtype=np.float64)
        if self.L.ndim != 2 or self.R.ndim != 2 or self.L.shape[1] != self.R.shape[1]:
            raise ValueError(f"incompatible factor shapes {self.L.shape} and {self.R.shape}")

    @property
    def rank(self):
        return self.L.shape[1]

    def copy(self):
        return FactorPair(self.L.copy(), self.R.copy())

    def product(self):
        return self.L @ self.R.T


def gauge_transform(factors, M):
    """Apply ``(L, R) -> (L M^{-1}, R M^T)``, which leaves ``L R^T`` unchanged."""
    M = np.asarray(M, dtype=np.float64)
    r = factors.rank
    if M.shape != (r, r):
        raise ValueError(f"gauge matrix must be {r}x{r}, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SingularGauge("gauge matrix has non-finite entries")
    # L M^{-1} = solve(M^T, L^T)^T
    try:
        with np.errstate(all="ignore"):
            Linv = np.linalg.solve(M.T, factors.L.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularGauge(f"gauge matrix is singular: {exc}") from None
    if np.linalg.cond(M) > 1e14 or not np.all(np.isfinite(Linv)):
        raise SingularGauge("gauge matrix is numerically singular")
    return FactorPair(Linv, factors.R @ M.T)


def random_factors(n, m, r, rng, balance="balanced", ratio=1.0):
    """Gaussian factors with entry std 1/sqrt(r).

    ``balance`` is ``"balanced"`` (rescale so ||L||_F = ||R||_F),
    ``"unbalanced"`` (rescale so ||L||_F = ratio * ||R||_F) or ``"raw"``.
    The product L R^T is the same in every case.
    """
    L = rng.standard_normal((n, r)) / np.sqrt(r)
    R = rng.standard_normal((m, r)) / np.sqrt(r)
    if balance == "raw":
        return FactorPair(L, R)
    if balance == "balanced":
        ratio = 1.0
    elif balance != "unbalanced":
        raise ValueError(f"unknown balance mode {balance!r}")
    nl, nr = np.linalg.norm(L), np.linalg.norm(R)
    # scale c: ||cL|| = ratio * ||R/c||  =>  c^2 = ratio * nr / nl
    c = np.sqrt(ratio * nr / nl)
    return FactorPair(L * c, R / c)
