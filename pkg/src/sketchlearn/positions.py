"""Learning where the nonzeros of a CountSketch go.

greedy_positions places one column at a time, trying every bucket and sign
and keeping the choice that minimises the summed LRA objective over the
training matrices. The default proxy objective is evaluated in Gram space:
with K = A A^T, the best rank-k error inside row(SA) is

    tr(K) - (sum of the top-k eigenvalues of G^{+1/2} H G^{+1/2}),
    G = S K S^T,  H = S K^2 S^T,

so each candidate costs O(m^3) regardless of d.
"""
from dataclasses import dataclass, field

import numpy as np

from .kernels import argmax_abs_inner
from .linalg import as_matrix, leverage_scores, ridge_leverage_scores
from .errors import RankDeficiencyError
from .lra import SketchSet, lra_two_sided
from .sketch import CountSketch, heavy_row_sketch, random_countsketch

# relative tolerance (of the summed tr(A A^T)) within which candidates tie
GREEDY_TIE_RTOL = 1e-9
# eigenvalues of S K S^T below this fraction of the largest are dropped
GRAM_RTOL = 1e-10

PROVENANCES = ("greedy", "inner_product", "heavy_rows", "random")


class TrainingSet:
    """Ordered matrices of one shape plus disjoint train/test index lists."""

    def __init__(self, matrices, train=None, test=()):
        mats = [as_matrix(A) for A in matrices]
        if not mats:
            raise ValueError("training set is empty")
        shape = mats[0].shape
        if any(A.shape != shape for A in mats):
            raise ValueError("all matrices must share one shape")
        train = list(range(len(mats))) if train is None else [int(i) for i in train]
        test = [int(i) for i in test]
        if set(train) & set(test):
            raise ValueError("train and test splits overlap")
        if any(not 0 <= i < len(mats) for i in train + test):
            raise ValueError("split index out of range")
        self.matrices, self.train, self.test = mats, train, test

    @property
    def shape(self):
        return self.matrices[0].shape

    @property
    def train_matrices(self):
        return [self.matrices[i] for i in self.train]

    @property
    def test_matrices(self):
        return [self.matrices[i] for i in self.test]

    def average(self):
        return np.mean(self.train_matrices, axis=0)


def _matrices(Tr):
    if isinstance(Tr, TrainingSet):
        return Tr.train_matrices
    if isinstance(Tr, np.ndarray) and Tr.ndim == 2:
        return [as_matrix(Tr)]
    mats = [as_matrix(A) for A in Tr]
    if not mats:
        raise ValueError("training set is empty")
    return mats


@dataclass
class PositionPlan:
    m: int
    p: np.ndarray
    signs: np.ndarray
    provenance: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.int64)
        self.signs = np.asarray(self.signs, dtype=float)
        if self.p.shape != self.signs.shape:
            raise ValueError("p and signs must have equal length")
        if len(self.p) and (self.p.min() < 0 or self.p.max() >= self.m):
            raise ValueError(f"positions must lie in [0, {self.m})")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def n(self):
        return len(self.p)

    def to_countsketch(self):
        return CountSketch(self.m, self.n, self.p, self.signs)

    def to_dict(self):
        return {"m": int(self.m), "p": self.p.tolist(), "signs": self.signs.tolist(),
                "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["m"]), d["p"], d["signs"], d["provenance"])


def _topk_explained(G, H, k):
    """Sum of the top-k eigenvalues of G^{+1/2} H G^{+1/2}."""
    g, Q = np.linalg.eigh(G)
    keep = g > g[-1] * GRAM_RTOL if g[-1] > 0 else np.zeros(len(g), bool)
    if not keep.any():
        return 0.0
    W = Q[:, keep] / np.sqrt(g[keep])
    ev = np.linalg.eigvalsh(W.T @ H @ W)
    return float(ev[::-1][:k].sum())


class _GramState:
    """S K S^T, S K^2 S^T and S K, S K^2 for one training matrix."""

    def __init__(self, A, m):
        self.K = A @ A.T
        self.K2 = self.K @ self.K
        self.trace = float(np.trace(self.K))
        n = self.K.shape[0]
        self.G = np.zeros((m, m))
        self.H = np.zeros((m, m))
        self.SK = np.zeros((m, n))
        self.SK2 = np.zeros((m, n))

    def candidate(self, i, j, s):
        G, H = self.G.copy(), self.H.copy()
        for M, SK, K in ((G, self.SK, self.K), (H, self.SK2, self.K2)):
            c = s * SK[:, i]
            M[j, :] += c
            M[:, j] += c
            M[j, j] += K[i, i]
        return G, H

    def commit(self, i, j, s):
        self.G, self.H = self.candidate(i, j, s)
        self.SK[j] += s * self.K[i]
        self.SK2[j] += s * self.K2[i]


def _rms_row_norms(mats):
    return np.sqrt(np.mean([np.sum(A * A, axis=1) for A in mats], axis=0))


def greedy_positions(Tr, m, k, order="nonincreasing_norm", objective="proxy", seed=0):
    """Greedy bucket/sign search over columns of the sketch.

    order: "nonincreasing_norm" (RMS row norm over the training matrices,
    stable on ties) or "given". objective: "proxy" (one-sided error in
    row(SA), Gram form) or "exact" (two-sided error with classical R, V, W
    drawn from ``seed``).
    """
    mats = _matrices(Tr)
    m, k = int(m), int(k)
    if m < 1 or k < 1:
        raise ValueError("m and k must be positive")
    n = mats[0].shape[0]
    if order == "nonincreasing_norm":
        cols = np.argsort(-_rms_row_norms(mats), kind="stable")
    elif order == "given":
        cols = np.arange(n)
    else:
        raise ValueError(f"unknown order {order!r}")
    if objective == "proxy":
        states = [_GramState(A, m) for A in mats]
        total_trace = sum(st.trace for st in states)

        def score(i, j, s):
            return sum(st.trace - _topk_explained(*st.candidate(i, j, s), k) for st in states)
    elif objective == "exact":
        total_trace = sum(float(np.sum(A * A)) for A in mats)
        exact = _ExactObjective(mats, m, k, seed)
        score = exact.score
    else:
        raise ValueError(f"unknown objective {objective!r}")

    p = np.zeros(n, dtype=np.int64)
    signs = np.zeros(n)
    trace = []
    tol = GREEDY_TIE_RTOL * max(total_trace, 1e-300)
    for i in cols:
        cand = np.array([[score(i, j, s) for s in (1.0, -1.0)] for j in range(m)])
        best = cand.min()
        # first candidate within tolerance in (bucket, +1 before -1) order
        flat = np.nonzero(cand.ravel() <= best + tol)[0][0]
        j, s = divmod(int(flat), 2)
        s = 1.0 if s == 0 else -1.0
        p[i], signs[i] = j, s
        if objective == "proxy":
            for st in states:
                st.commit(i, j, s)
        else:
            exact.commit(i, j, s)
        trace.append(float(cand.ravel()[flat]))
    meta = {"order": [int(c) for c in cols], "objective_trace": trace, "objective": objective}
    return PositionPlan(m, p, signs, "greedy", meta)


class _ExactObjective:
    def __init__(self, mats, m, k, seed):
        n, d = mats[0].shape
        self.mats, self.k, self.m = mats, k, m
        self.R = random_countsketch(m, d, [seed, 1])
        self.V = random_countsketch(min(n, 2 * m), n, [seed, 2])
        self.W = random_countsketch(min(d, 2 * m), d, [seed, 3])
        self.p = np.zeros(n, dtype=np.int64)
        self.v = np.zeros(n)

    def _error(self, S, A):
        try:
            return lra_two_sided(SketchSet(S, self.R, self.V, self.W), A, self.k).error
        except RankDeficiencyError:
            return float(np.sum(A * A))

    def score(self, i, j, s):
        p, v = self.p.copy(), self.v.copy()
        p[i], v[i] = j, s
        S = CountSketch(self.m, len(p), p, v)
        return sum(self._error(S, A) for A in self.mats)

    def commit(self, i, j, s):
        self.p[i], self.v[i] = j, s


def _top_left_singular_vector(block):
    U, _, _ = np.linalg.svd(block, full_matrices=False)
    u = U[:, 0]
    return u if u[np.argmax(np.abs(u))] > 0 else -u


def inner_product_positions(A_bar, m, k, seed):
    """Ridge-leverage sampling plus inner-product bucketing.

    Returns (S1, S2, meta). S1 buckets each row with the sampled row it is
    most aligned with (in absolute cosine) and fills each bucket with the
    top left singular vector of the rows it holds. S2 keeps the sampled
    rows: column c_j goes to bucket j with value 1, other columns carry 0.
    Repeated samples keep their first bucket, so some buckets may be empty.
    """
    A = as_matrix(A_bar, "A_bar")
    n = A.shape[0]
    m = int(m)
    if not 1 <= m <= n:
        raise ValueError(f"m={m} must lie in [1, {n}]")
    scores = ridge_leverage_scores(A, k).scores
    if scores.sum() <= 0:
        raise ValueError("A_bar has no nonzero rows")
    rng = np.random.default_rng(seed)
    sampled = rng.choice(n, size=m, replace=True, p=scores / scores.sum())

    norms = np.linalg.norm(A, axis=1)
    zero = norms == 0
    unit = np.zeros_like(A)
    unit[~zero] = A[~zero] / norms[~zero, None]
    p, sign = argmax_abs_inner(unit[sampled], unit)
    p[zero], sign[zero] = 0, 0.0

    v = np.zeros(n)
    for b in np.unique(p[~zero]):
        rows = np.nonzero((p == b) & ~zero)[0]
        v[rows] = _top_left_singular_vector(A[rows])
    S1 = CountSketch(m, n, p, v)

    p2 = np.zeros(n, dtype=np.int64)
    v2 = np.zeros(n)
    first = {}
    for j, c in enumerate(sampled):
        first.setdefault(int(c), j)
    for c, j in first.items():
        p2[c], v2[c] = j, 1.0
    S2 = CountSketch(m, n, p2, v2)
    meta = {"sampled": sampled.tolist(), "zero_rows": np.nonzero(zero)[0].tolist(),
            "signs": sign.tolist(), "ridge_lambda": ridge_leverage_scores(A, k).lam}
    return S1, S2, meta


def inner_product_plan(A_bar, m, k, seed):
    S1, _, meta = inner_product_positions(A_bar, m, k, seed)
    plan = PositionPlan(m, S1.p, meta["signs"], "inner_product", meta)
    return plan, S1


def learn_heavy_row_indices(Tr, threshold_mult=5.0, budget=None):
    """Rows that are most often heavy (leverage >= threshold_mult * d / n)."""
    mats = _matrices(Tr)
    n, d = mats[0].shape
    budget = n if budget is None else int(budget)
    if not 0 <= budget <= n:
        raise ValueError(f"budget={budget} must lie in [0, {n}]")
    counts = np.zeros(n, dtype=np.int64)
    for A in mats:
        counts += leverage_scores(A) >= threshold_mult * d / n
    order = np.lexsort((np.arange(n), -counts))
    return np.sort(order[:budget])


def heavy_rows_plan(Tr, m, heavy_fraction=0.3, threshold_mult=5.0, seed=0):
    """Identity rows for up to heavy_fraction * m learned heavy rows, CountSketch tail."""
    n = _matrices(Tr)[0].shape[0]
    budget = min(int(round(heavy_fraction * m)), m - 1, n)
    heavy = learn_heavy_row_indices(Tr, threshold_mult, budget)
    S = heavy_row_sketch(heavy, m - len(heavy), n, seed)
    meta = {"heavy": heavy.tolist()}
    return PositionPlan(m, S.p, S.v, "heavy_rows", meta), S


def lsh_heavy_row_match(reference_rows, A_test, q=3, seed=0):
    """Match each reference row to the test row with the nearest q Gaussian projections."""
    ref = as_matrix(reference_rows, "reference_rows")
    A_test = as_matrix(A_test, "A_test")
    if ref.shape[1] != A_test.shape[1]:
        raise ValueError("reference rows and A_test must have the same width")
    g = np.random.default_rng(seed).standard_normal((ref.shape[1], int(q)))
    f_ref, f_test = ref @ g, A_test @ g
    dist = ((f_ref[:, None, :] - f_test[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(dist, axis=1)
