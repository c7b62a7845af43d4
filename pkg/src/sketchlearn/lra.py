"""Sketched low-rank approximation and the worst-case safety check.

``lra_one_sided`` returns the best rank-k approximation of A inside
row(SA). ``lra_two_sided`` is the four-sketch algorithm: it reduces the
problem to a small rank-constrained regression on V A R^T, S A W^T and
V A W^T and returns A R^T Z S A in factored form.
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import RankDeficiencyError
from .linalg import RANK_RTOL, as_matrix, frob2, pivoted_qr, row_basis, ridge_leverage_scores
from .sketch import apply_left, apply_right, identity_sketch, random_countsketch

# rows of each ApproxCheck estimator sketch: ceil(ESTIMATOR_ROWS_FACTOR / beta**2)
ESTIMATOR_ROWS_FACTOR = 4.0


@dataclass(frozen=True)
class SketchSet:
    """(S, R, V, W) for an n x d target: S, V act on rows, R, W on columns."""

    S: object
    R: object
    V: object
    W: object

    def check(self, A):
        n, d = A.shape
        for name, sk, want in (("S", self.S, n), ("R", self.R, d), ("V", self.V, n), ("W", self.W, d)):
            if sk.shape[1] != want:
                raise ValueError(f"sketch {name} has {sk.shape[1]} columns, expected {want}")

    @classmethod
    def identity(cls, n, d):
        return cls(identity_sketch(n), identity_sketch(d), identity_sketch(n), identity_sketch(d))


@dataclass
class LraResult:
    P: np.ndarray
    Q: np.ndarray
    error: float
    k: int
    rank_clipped: bool = False
    meta: dict = field(default_factory=dict)

    def approximation(self):
        return self.P @ self.Q

    def to_dict(self):
        out = {"k": self.k, "error": self.error}
        if "which_branch" in self.meta:
            out["which_branch"] = self.meta["which_branch"]
        return out


def _zero_result(A, k):
    n, d = A.shape
    return LraResult(np.zeros((n, k)), np.zeros((k, d)), frob2(A), k, rank_clipped=True)


def lra_one_sided(S, A, k):
    """Best rank-k approximation of A with rows in row(SA): [AV]_k V^T."""
    A = as_matrix(A)
    k = int(k)
    V = row_basis(apply_left(S, A))
    r = V.shape[1]
    if r == 0:
        return _zero_result(A, k)
    k_eff = min(k, r)
    U, s, Wt = np.linalg.svd(A @ V, full_matrices=False)
    P = U[:, :k_eff] * s[:k_eff]
    X = P @ Wt[:k_eff]
    error = frob2(A - X @ V.T)
    return LraResult(P, Wt[:k_eff] @ V.T, error, k_eff, rank_clipped=k_eff < k)


def lra_proxy_objective(S, A, k):
    """Greedy/value-learning proxy: the one-sided error for S on A.

    The proxy for a column sketch R is the same call on A.T.
    """
    return lra_one_sided(S, A, k).error


def _triangular_rank(T, shape):
    diag = np.abs(np.diag(T))
    if len(diag) == 0 or diag[0] == 0:
        return 0
    return int(np.count_nonzero(diag > max(shape) * diag[0] * RANK_RTOL))


def _rank_constrained_factors(C, D, G, k, names=("C", "D")):
    """Factors (left, right) with Z = left @ right minimising ||C Z D - G||_F."""
    Qc, Tc, pc = pivoted_qr(C)
    rc = _triangular_rank(Tc, C.shape)
    if rc == 0:
        raise RankDeficiencyError(f"{names[0]} has rank 0; its triangular factor is singular")
    Qd, Td, pd = pivoted_qr(D.T)
    rd = _triangular_rank(Td, D.shape)
    if rd == 0:
        raise RankDeficiencyError(f"{names[1]} has rank 0; its triangular factor is singular")
    Uc, Ud = Qc[:, :rc], Qd[:, :rd]
    k_eff = min(int(k), rc, rd)
    Um, sm, Vmt = np.linalg.svd(Uc.T @ G @ Ud, full_matrices=False)
    zl = Um[:, :k_eff] * sm[:k_eff]
    zr = Vmt[:k_eff]
    left = np.zeros((C.shape[1], k_eff))
    left[pc[:rc]] = solve_triangular(Tc[:rc, :rc], zl)
    right = np.zeros((k_eff, D.shape[0]))
    right[:, pd[:rd]] = solve_triangular(Td[:rd, :rd], zr.T).T
    return left, right, k_eff


def solve_rank_constrained(C, D, G, k):
    """argmin over rank-k Z of ||C Z D - G||_F^2."""
    C, D, G = as_matrix(C, "C"), as_matrix(D, "D"), as_matrix(G, "G")
    if C.shape[0] != G.shape[0] or D.shape[1] != G.shape[1]:
        raise ValueError(f"shapes do not conform: C {C.shape}, D {D.shape}, G {G.shape}")
    left, right, _ = _rank_constrained_factors(C, D, G, k)
    return left @ right


def lra_two_sided(sketches, A, k):
    A = as_matrix(A)
    sketches.check(A)
    k = int(k)
    AR = apply_right(A, sketches.R)
    SA = apply_left(sketches.S, A)
    VA = apply_left(sketches.V, A)
    C = apply_left(sketches.V, AR)
    D = apply_right(SA, sketches.W)
    G = apply_right(VA, sketches.W)
    left, right, k_eff = _rank_constrained_factors(C, D, G, k, names=("V A R^T", "S A W^T"))
    P = AR @ left
    Q = right @ SA
    return LraResult(P, Q, frob2(A - P @ Q), k_eff, rank_clipped=k_eff < k)


def estimator_rows(beta):
    return int(math.ceil(ESTIMATOR_ROWS_FACTOR / beta**2))


def sketched_residual(result, A, S_est, R_est):
    """||S_est (PQ - A) R_est^T||_F^2."""
    return frob2(apply_right(apply_left(S_est, result.P @ result.Q - A), R_est))


def approx_check(learned, classical, A, k, beta, seed):
    """Run both sketch sets and keep the one whose estimated error is smaller.

    Errors are estimated with fresh classical CountSketches on both sides
    (seeds ``seed + 1`` and ``seed + 2``). Ties go to the learned branch.
    """
    A = as_matrix(A)
    n, d = A.shape
    res_l = lra_two_sided(learned, A, k)
    res_c = lra_two_sided(classical, A, k)
    rows = estimator_rows(beta)
    S_est = random_countsketch(rows, n, seed + 1)
    R_est = random_countsketch(rows, d, seed + 2)
    est_l = sketched_residual(res_l, A, S_est, R_est)
    est_c = sketched_residual(res_c, A, S_est, R_est)
    branch = "learned" if est_l <= est_c else "classical"
    winner = res_l if branch == "learned" else res_c
    meta = dict(winner.meta, which_branch=branch, estimate_learned=est_l,
                estimate_classical=est_c, error_learned=res_l.error,
                error_classical=res_c.error)
    return replace(winner, meta=meta)


def tv_distance_diagnostic(A_train, A_test, k):
    """Total variation distance between normalised ridge-leverage distributions."""
    A_train, A_test = as_matrix(A_train, "A_train"), as_matrix(A_test, "A_test")
    if A_train.shape[0] != A_test.shape[0]:
        raise ValueError("A_train and A_test must have the same number of rows")
    p = ridge_leverage_scores(A_train, k).scores
    q = ridge_leverage_scores(A_test, k).scores
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("ridge leverage scores are all zero")
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())
