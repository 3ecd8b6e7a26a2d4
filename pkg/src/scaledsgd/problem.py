"""Incomplete matrices: data model, synthetic generation, splitting and CSV I/O."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import DuplicateEntry, ParseError, TooManySamples
from .factors import FactorPair


@dataclass(frozen=True, eq=False)
class ObservedMatrix:
    """Known entries of an n x m matrix in coordinate form, sorted by (i, j)."""

    n: int
    m: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64).ravel()
        cols = np.asarray(self.cols, dtype=np.int64).ravel()
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("rows, cols and values must have the same length")
        if self.n < 0 or self.m < 0:
            raise ValueError("dimensions must be non-negative")
        if rows.size:
            if rows.min() < 0 or rows.max() >= self.n or cols.min() < 0 or cols.max() >= self.m:
                raise ValueError(f"entry index out of range for a {self.n}x{self.m} matrix")
        key = rows * self.m + cols
        order = np.argsort(key, kind="stable")
        key = key[order]
        dup = np.flatnonzero(key[1:] == key[:-1])
        if dup.size:
            k = key[dup[0]]
            raise DuplicateEntry(int(k // self.m), int(k % self.m))
        for name, arr in (("rows", rows[order]), ("cols", cols[order]), ("values", values[order])):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))

    @classmethod
    def from_entries(cls, n, m, entries):
        entries = list(entries)
        if not entries:
            return cls(n, m, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        i, j, v = zip(*entries)
        return cls(n, m, np.array(i), np.array(j), np.array(v, dtype=np.float64))

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def shape(self):
        return (self.n, self.m)

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def norm(self):
        return float(np.sqrt(np.dot(self.values, self.values)))

    def subset(self, mask):
        return ObservedMatrix(self.n, self.m, self.rows[mask], self.cols[mask], self.values[mask])

    def to_dense(self, fill=0.0):
        X = np.full((self.n, self.m), fill)
        X[self.rows, self.cols] = self.values
        return X

    def __eq__(self, other):
        if not isinstance(other, ObservedMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"ObservedMatrix({self.n}x{self.m}, nnz={self.nnz})"


@dataclass(frozen=True)
class GeneratorSpec:
    n: int
    m: int
    r: int
    os: float
    condition_number: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0
    test_count: int = 0

    def __post_init__(self):
        if self.r < 1 or self.r > min(self.n, self.m):
            raise ValueError(f"rank {self.r} must lie in [1, min(n, m)] for {self.n}x{self.m}")
        if self.os <= 0:
            raise ValueError("over-sampling ratio must be positive")
        if self.condition_number < 1:
            raise ValueError("condition number must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.test_count < 0:
            raise ValueError("test_count must be >= 0")

    @property
    def degrees_of_freedom(self):
        return (self.n + self.m - self.r) * self.r

    @property
    def num_samples(self):
        return int(math.floor(self.os * self.degrees_of_freedom + 0.5))


@dataclass
class SplitDataset:
    train: ObservedMatrix
    test: ObservedMatrix
    meta: dict = field(default_factory=dict)


def entry_values(factors, rows, cols):
    """``(L R^T)[rows, cols]`` without forming the full product."""
    return np.einsum("ij,ij->i", factors.L[rows], factors.R[cols])


def ground_truth(spec):
    """Rank-r factors of the synthetic matrix described by ``spec``."""
    rng = rngmod.stream(spec.seed, "truth")
    A = rng.standard_normal((spec.n, spec.r))
    B = rng.standard_normal((spec.m, spec.r))
    if spec.condition_number == 1:
        return FactorPair(A, B)
    QA, _ = np.linalg.qr(A)
    QB, _ = np.linalg.qr(B)
    # log-spaced spectrum from 1/CN to 1, scaled so the largest singular value
    # matches that of a typical n x m Gaussian rank-r product
    sv = np.logspace(-np.log10(spec.condition_number), 0.0, spec.r)[::-1]
    sv = sv * math.sqrt(spec.n * spec.m)
    root = np.sqrt(sv)
    return FactorPair(QA * root, QB * root)


def sample_cells(n, m, count, rng, exclude=None):
    """Uniform sample of ``count`` distinct cells (flat indices), sorted."""
    total = n * m
    if exclude is None or len(exclude) == 0:
        if count > total:
            raise TooManySamples(f"{count} samples requested from {total} cells")
        return np.sort(rng.choice(total, size=count, replace=False))
    exclude = np.unique(exclude)
    if count > total - exclude.size:
        raise TooManySamples(f"{count} samples requested from {total - exclude.size} free cells")
    # iid uniform draws over the free cells, deduplicated by first appearance,
    # are a uniform sample without replacement
    picked = np.zeros(0, dtype=np.int64)
    while picked.size < count:
        cand = rng.integers(0, total, size=2 * (count - picked.size) + 16)
        cand = cand[~np.isin(cand, exclude)]
        merged = np.concatenate([picked, cand])
        _, first = np.unique(merged, return_index=True)
        picked = merged[np.sort(first)]
    return np.sort(picked[:count])


def generate(spec):
    """Sample ``P_Omega(A B^T)`` as described by ``spec``; returns ``(data, truth)``.

    |Omega| = round(os * (n + m - r) * r) cells are chosen uniformly
    without replacement.  Gaussian noise of std ``noise_sigma`` is added to the
    observed values only.
    """
    count = spec.num_samples
    if count > spec.n * spec.m:
        raise TooManySamples(
            f"os={spec.os} asks for {count} entries but the matrix has {spec.n * spec.m}"
        )
    truth = ground_truth(spec)
    cells = sample_cells(spec.n, spec.m, count, rngmod.stream(spec.seed, "omega"))
    rows, cols = np.divmod(cells, spec.m)
    values = entry_values(truth, rows, cols)
    if spec.noise_sigma > 0:
        values = values + spec.noise_sigma * rngmod.stream(spec.seed, "noise").standard_normal(count)
    return ObservedMatrix(spec.n, spec.m, rows, cols, values), truth


def held_out(spec, data, truth, count=None):
    """Noise-free test entries drawn uniformly from the cells outside ``data``."""
    count = spec.test_count if count is None else count
    if count == 0:
        return ObservedMatrix(spec.n, spec.m, [], [], [])
    cells = sample_cells(
        spec.n, spec.m, count, rngmod.stream(spec.seed, "test"),
        exclude=data.rows * data.m + data.cols,
    )
    rows, cols = np.divmod(cells, spec.m)
    return ObservedMatrix(spec.n, spec.m, rows, cols, entry_values(truth, rows, cols))


def split(data, per_row_holdout, seed):
    """Hold out ``per_row_holdout`` uniformly chosen entries of every row that has more."""
    rng = rngmod.stream(seed, "split")
    test_mask = np.zeros(data.nnz, dtype=bool)
    if per_row_holdout > 0 and data.nnz:
        # entries are sorted by row, so each row is a contiguous slice
        starts = np.searchsorted(data.rows, np.arange(data.n), side="left")
        stops = np.searchsorted(data.rows, np.arange(data.n), side="right")
        for lo, hi in zip(starts, stops):
            if hi - lo >= per_row_holdout + 1:
                pick = rng.choice(hi - lo, size=per_row_holdout, replace=False)
                test_mask[lo + pick] = True
    return SplitDataset(data.subset(~test_mask), data.subset(test_mask))


def select_rows(data, count, seed):
    """Keep ``count`` uniformly chosen rows, renumbered 0..count-1 in original order."""
    if count > data.n:
        raise ValueError(f"cannot select {count} of {data.n} rows")
    chosen = np.sort(rngmod.stream(seed, "rows").choice(data.n, size=count, replace=False))
    remap = np.full(data.n, -1, dtype=np.int64)
    remap[chosen] = np.arange(count)
    keep = remap[data.rows] >= 0
    return ObservedMatrix(count, data.m, remap[data.rows[keep]], data.cols[keep], data.values[keep])


def save_csv(data, path):
    """Write ``i,j,value`` triplets; values use shortest round-trip repr."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# shape {data.n} {data.m}\n")
        fh.write("i,j,value\n")
        for i, j, v in zip(data.rows.tolist(), data.cols.tolist(), data.values.tolist()):
            fh.write(f"{i},{j},{v!r}\n")


def load_csv(path, n=None, m=None, drop_value=None):
    """Read an ``i,j,value`` triplet file with 0-based indices.

    A ``# shape n m`` comment and an ``i,j,value`` header are optional.  Without
    declared dimensions the shape is inferred from the largest indices.
    Entries equal to ``drop_value`` (e.g. a "not rated" sentinel) are skipped.
    """
    shape = None
    seen = {}
    rows, cols, vals = [], [], []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                parts = text[1:].split()
                if len(parts) == 3 and parts[0] == "shape":
                    try:
                        shape = (int(parts[1]), int(parts[2]))
                    except ValueError:
                        raise ParseError(lineno, f"bad shape line {text!r}") from None
                continue
            fields = next(csv.reader([text]))
            if len(fields) != 3:
                raise ParseError(lineno, f"expected 3 fields, got {len(fields)}")
            try:
                i, j, v = int(fields[0]), int(fields[1]), float(fields[2])
            except ValueError:
                if not rows and not seen and fields[0].strip().lower() in ("i", "row", "user"):
                    continue
                raise ParseError(lineno, f"cannot parse {text!r}") from None
            if i < 0 or j < 0:
                raise ParseError(lineno, "negative index")
            if drop_value is not None and v == drop_value:
                continue
            if (i, j) in seen:
                raise DuplicateEntry(i, j, lineno)
            seen[(i, j)] = lineno
            rows.append(i)
            cols.append(j)
            vals.append(v)
    if shape is not None:
        n = shape[0] if n is None else n
        m = shape[1] if m is None else m
    n = (max(rows) + 1 if rows else 0) if n is None else n
    m = (max(cols) + 1 if cols else 0) if m is None else m
    return ObservedMatrix(n, m, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
                          np.array(vals, dtype=np.float64))
