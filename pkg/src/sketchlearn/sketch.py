"""Sketch types and their application to matrices.

A CountSketch with ``m`` rows and ``n`` columns is stored as a position
vector ``p`` (bucket of each column) and a value vector ``v``. Applying it
to an ``n x d`` matrix hashes the rows of the matrix into ``m`` buckets.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64), so
every constructor is reproducible from its seed.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CountSketch:
    """Sparse m x n sketch with one nonzero per column.

    ``classical=True`` additionally requires every value to be +1 or -1.
    Learned sketches keep the same type with arbitrary real values.
    """

    m: int
    n: int
    p: np.ndarray
    v: np.ndarray
    classical: bool = False

    def __post_init__(self):
        m, n = int(self.m), int(self.n)
        if m < 1 or n < 0:
            raise ValueError(f"invalid sketch shape ({m}, {n})")
        p = _frozen(self.p, np.int64).reshape(-1)
        v = _frozen(self.v, np.float64).reshape(-1)
        if p.shape != (n,) or v.shape != (n,):
            raise ValueError(f"p and v must have length n={n}")
        if n and (p.min() < 0 or p.max() >= m):
            raise ValueError(f"positions must lie in [0, {m})")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if self.classical and not np.all(np.abs(v) == 1.0):
            raise ValueError("classical CountSketch values must be +1 or -1")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "v", v)

    @property
    def shape(self):
        return (self.m, self.n)

    def with_values(self, v):
        return CountSketch(self.m, self.n, self.p, v)

    def to_dict(self):
        return {"m": self.m, "n": self.n, "p": self.p.tolist(), "v": self.v.tolist()}

    def bucket_counts(self):
        return np.bincount(self.p, minlength=self.m)


@dataclass(frozen=True, eq=False)
class StructuredSketch:
    """Identity rows for the heavy columns, a CountSketch on the rest.

    Up to a permutation of columns the dense form is the block matrix
    ``[[I, 0], [0, tail]]``; ``column_order`` is that permutation (heavy
    indices first, then the remaining indices in increasing order).
    Heavy column ``heavy[j]`` maps to row ``j``; tail rows follow.
    """

    heavy: np.ndarray
    tail: CountSketch

    def __post_init__(self):
        heavy = np.unique(np.asarray(self.heavy, dtype=np.int64))
        n = len(heavy) + self.tail.n
        if len(heavy) and (heavy[0] < 0 or heavy[-1] >= n):
            raise ValueError(f"heavy indices must lie in [0, {n})")
        heavy.setflags(write=False)
        object.__setattr__(self, "heavy", heavy)
        rest = np.setdiff1d(np.arange(n), heavy)
        p = np.empty(n, dtype=np.int64)
        v = np.empty(n)
        p[heavy] = np.arange(len(heavy))
        v[heavy] = 1.0
        p[rest] = len(heavy) + self.tail.p
        v[rest] = self.tail.v
        object.__setattr__(self, "_flat", CountSketch(self.m, n, p, v))

    @property
    def m(self):
        return len(self.heavy) + self.tail.m

    @property
    def n(self):
        return len(self.heavy) + self.tail.n

    @property
    def shape(self):
        return (self.m, self.n)

    @property
    def p(self):
        return self._flat.p

    @property
    def v(self):
        return self._flat.v

    @property
    def column_order(self):
        rest = np.setdiff1d(np.arange(self.n), self.heavy)
        return np.concatenate([self.heavy, rest])

    def as_countsketch(self):
        return self._flat

    def with_values(self, v):
        """Flat CountSketch with the same positions and new values."""
        return self._flat.with_values(v)

    def to_dict(self):
        d = self._flat.to_dict()
        d["heavy"] = self.heavy.tolist()
        return d


@dataclass(frozen=True, eq=False)
class StackedSketch:
    """Vertical concatenation of sketches sharing the column count."""

    parts: tuple

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("need at least one sketch")
        n = parts[0].shape[1]
        if any(s.shape[1] != n for s in parts):
            raise ValueError("all stacked sketches must have the same column count")
        object.__setattr__(self, "parts", parts)

    @property
    def m(self):
        return sum(s.shape[0] for s in self.parts)

    @property
    def n(self):
        return self.parts[0].shape[1]

    @property
    def shape(self):
        return (self.m, self.n)


@dataclass(frozen=True, eq=False)
class DenseSketch:
    matrix: np.ndarray
    kind: str = "dense"

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def m(self):
        return self.matrix.shape[0]

    @property
    def n(self):
        return self.matrix.shape[1]


def _check_dims(m, n):
    if int(m) < 1 or int(n) < 1:
        raise ValueError(f"sketch dimensions must be positive, got m={m}, n={n}")


def random_countsketch(m, n, seed):
    """Classical CountSketch: uniform bucket and uniform sign per column."""
    _check_dims(m, n)
    rng = np.random.default_rng(seed)
    p = rng.integers(0, m, size=n)
    v = rng.integers(0, 2, size=n) * 2.0 - 1.0
    return CountSketch(m, n, p, v, classical=True)


def identity_sketch(n):
    return CountSketch(n, n, np.arange(n), np.ones(n), classical=True)


def zero_sketch(m, n):
    return CountSketch(m, n, np.zeros(n, dtype=np.int64), np.zeros(n))


def heavy_row_sketch(heavy, m_tail, n, seed):
    heavy = np.unique(np.asarray(heavy, dtype=np.int64))
    if len(heavy) and (heavy[0] < 0 or heavy[-1] >= n):
        raise ValueError(f"heavy indices must lie in [0, {n})")
    if int(m_tail) < 1:
        raise ValueError("m_tail must be positive")
    n_tail = n - len(heavy)
    if n_tail:
        tail = random_countsketch(m_tail, n_tail, seed)
    else:
        tail = CountSketch(m_tail, 0, [], [])
    return StructuredSketch(heavy, tail)


def gaussian_sketch(m, n, seed):
    _check_dims(m, n)
    rng = np.random.default_rng(seed)
    return DenseSketch(rng.standard_normal((m, n)) / np.sqrt(m), "gaussian")


def sjlt(m, n, s, seed):
    """s stacked CountSketches of m/s rows each, scaled by 1/sqrt(s)."""
    _check_dims(m, n)
    if s < 1 or m % s:
        raise ValueError(f"s={s} must divide m={m}")
    rng = np.random.default_rng(seed)
    blocks = [to_dense(random_countsketch(m // s, n, rng)) for _ in range(s)]
    return DenseSketch(np.vstack(blocks) / np.sqrt(s), f"sjlt({s})")


def concat_vertical(S1, S2):
    if S1.shape[1] != S2.shape[1]:
        raise ValueError(f"column mismatch: {S1.shape[1]} vs {S2.shape[1]}")
    parts = []
    for s in (S1, S2):
        parts.extend(s.parts if isinstance(s, StackedSketch) else [s])
    return StackedSketch(tuple(parts))


def to_dense(S):
    if isinstance(S, (CountSketch, StructuredSketch)):
        out = np.zeros((S.m, S.n))
        out[S.p, np.arange(S.n)] = S.v
        return out
    if isinstance(S, StackedSketch):
        return np.vstack([to_dense(s) for s in S.parts])
    if isinstance(S, DenseSketch):
        return np.array(S.matrix)
    return np.array(S, dtype=float)


def apply_left(S, A):
    """S @ A. Sparse sketches accumulate rows bucket by bucket."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("A must be 2-D")
    if S.shape[1] != A.shape[0]:
        raise ValueError(f"sketch has {S.shape[1]} columns but A has {A.shape[0]} rows")
    if isinstance(S, (CountSketch, StructuredSketch)):
        return kernels.cs_apply_rows(S.p, S.v, A, S.m)
    if isinstance(S, StackedSketch):
        return np.vstack([apply_left(s, A) for s in S.parts])
    if isinstance(S, DenseSketch):
        return S.matrix @ A
    return np.asarray(S, dtype=float) @ A


def apply_right(A, R):
    """A @ R.T, i.e. sketching the columns of A."""
    A = np.asarray(A, dtype=np.float64)
    if R.shape[1] != A.shape[1]:
        raise ValueError(f"sketch has {R.shape[1]} columns but A has {A.shape[1]} columns")
    if isinstance(R, (CountSketch, StructuredSketch)):
        return kernels.cs_apply_cols(R.p, R.v, A, R.m)
    return apply_left(R, A.T).T


def sketch_from_dict(d):
    if "parts" in d:
        return StackedSketch(tuple(sketch_from_dict(x) for x in d["parts"]))
    flat = CountSketch(d["m"], d["n"], d["p"], d["v"])
    if "heavy" not in d:
        return flat
    heavy = np.asarray(d["heavy"], dtype=np.int64)
    rest = np.setdiff1d(np.arange(flat.n), heavy)
    tail = CountSketch(flat.m - len(heavy), len(rest), flat.p[rest] - len(heavy), flat.v[rest])
    return StructuredSketch(heavy, tail)


def sketch_to_dict(S):
    if isinstance(S, StackedSketch):
        return {"parts": [sketch_to_dict(s) for s in S.parts]}
    if isinstance(S, (CountSketch, StructuredSketch)):
        return S.to_dict()
    raise TypeError(f"cannot serialise {type(S).__name__}")
