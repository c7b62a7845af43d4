"""Dense linear-algebra helpers shared by every other module.

Matrices are plain 2-D float64 numpy arrays. ``as_matrix`` is the single
entry check (2-D, non-empty, finite); functions below call it on inputs
coming from outside the package.
"""
import warnings
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from .errors import RankClippedWarning

# sigma_i counts as zero when sigma_i <= max(n, d) * sigma_max * RANK_RTOL
RANK_RTOL = 1e-12


class SvdFactors(NamedTuple):
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return (self.U * self.sigma) @ self.V.T


class QrFactors(NamedTuple):
    Q: np.ndarray
    R: np.ndarray


class RidgeScores(NamedTuple):
    scores: np.ndarray
    lam: float
    fallback: bool


def as_matrix(A, name="A"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if A.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def frob2(A):
    """Squared Frobenius norm."""
    A = np.asarray(A)
    return float(np.vdot(A, A).real)


def rank_tolerance(sigma, shape):
    if len(sigma) == 0:
        return 0.0
    return max(shape) * float(sigma[0]) * RANK_RTOL


def numerical_rank(sigma, shape):
    sigma = np.asarray(sigma)
    if len(sigma) == 0 or sigma[0] == 0:
        return 0
    return int(np.count_nonzero(sigma > rank_tolerance(sigma, shape)))


def thin_svd(A):
    """Thin SVD truncated to numerical rank, as (U, sigma, V)."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = numerical_rank(s, A.shape)
    return SvdFactors(U[:, :r], s[:r], Vt[:r].T)


def truncated_svd(A, k):
    A = as_matrix(A)
    k = int(k)
    if not 1 <= k <= min(A.shape):
        raise ValueError(f"k={k} outside [1, {min(A.shape)}]")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return SvdFactors(U[:, :k], s[:k], Vt[:k].T)


def best_rank_k(A, k):
    """[A]_k; k is clipped to min(A.shape)."""
    k = min(int(k), min(A.shape))
    if k <= 0:
        return np.zeros_like(A)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    return (U[:, :k] * s[:k]) @ Vt[:k]


def best_rank_k_error(A, k):
    """||A - [A]_k||_F^2 computed from the discarded singular values."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return float(np.sum(s[int(k):] ** 2))


def qr(A):
    """Reduced QR with the sign convention diag(R) >= 0."""
    A = as_matrix(A)
    Q, R = np.linalg.qr(A, mode="reduced")
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return QrFactors(Q * signs, R * signs[:, None])


def pivoted_qr(A):
    """Column-pivoted QR: ``A[:, perm] = Q @ R`` with |diag(R)| non-increasing."""
    Q, R, perm = sla.qr(A, mode="economic", pivoting=True)
    return Q, R, perm


def pseudo_inverse(A):
    A = as_matrix(A)
    U, s, V = thin_svd(A)
    if len(s) == 0:
        return np.zeros(A.T.shape)
    return (V / s) @ U.T


def orth_basis(A):
    """Orthonormal basis of col(A) (numerical rank columns)."""
    return thin_svd(A).U


def row_basis(A):
    """Orthonormal basis of row(A), returned as columns (d x r)."""
    return thin_svd(A).V


def leverage_scores(A):
    A = as_matrix(A)
    U = thin_svd(A).U
    return np.clip(np.sum(U * U, axis=1), 0.0, 1.0)


def ridge_leverage_scores(A, k):
    """Ridge leverage scores with lambda = ||A - A_k||_F^2 / k.

    When A has numerical rank <= k the regulariser vanishes; the plain
    leverage scores are returned with ``fallback=True``.
    """
    A = as_matrix(A)
    k = int(k)
    if k < 1:
        raise ValueError("k must be positive")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    r = numerical_rank(s, A.shape)
    if r <= k:
        return RidgeScores(leverage_scores(A), 0.0, True)
    lam = float(np.sum(s[k:r] ** 2)) / k
    U, s = U[:, :r], s[:r]
    weights = s**2 / (s**2 + lam)
    scores = np.clip((U * U) @ weights, 0.0, 1.0)
    return RidgeScores(scores, lam, False)


def projection_error_rank_k(A, B, k):
    """min ||A - X||_F^2 over rank-k X whose rows lie in row(B).

    Computed as ||[AV]_k V^T - A||_F^2 with V an orthonormal basis of
    row(B). If k exceeds rank(B) it is reduced with a RankClippedWarning.
    """
    A = as_matrix(A)
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column mismatch: A has {A.shape[1]}, B has {B.shape[1]}")
    V = row_basis(B)
    r = V.shape[1]
    k = int(k)
    if k > r:
        warnings.warn(f"k={k} exceeds rank(B)={r}; using {r}", RankClippedWarning, stacklevel=2)
        k = r
    if k == 0:
        return frob2(A)
    X = best_rank_k(A @ V, k) @ V.T
    return frob2(A - X)
