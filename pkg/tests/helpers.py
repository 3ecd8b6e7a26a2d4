"""Shared test fixtures that are plain functions."""
import numpy as np

from scaledsgd.problem import ObservedMatrix


def random_observed(n, m, nnz, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    cells = rng.choice(n * m, size=nnz, replace=False)
    rows, cols = np.divmod(cells, m)
    return ObservedMatrix(n, m, rows, cols, scale * rng.standard_normal(nnz))
