"""Learning the values of a CountSketch with fixed positions.

Three losses are available. ``fewshot`` and ``subspace`` come with closed
form gradients in v; ``empirical_lra`` is differentiated by central
differences. All gradients are with respect to the value vector v (one
entry per column of the sketch).
"""
import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DivergenceError, RankDeficiencyError
from .linalg import RANK_RTOL, as_matrix, frob2, numerical_rank
from .lra import lra_one_sided
from .positions import PositionPlan, _matrices
from .sketch import CountSketch, apply_left

# loss > DIVERGENCE_FACTOR * initial loss aborts the optimisation
DIVERGENCE_FACTOR = 1e6
FD_STEP = 1e-5


def fd_steps(v, h=FD_STEP):
    return h * np.maximum(1.0, np.abs(v))


def _as_countsketch(S):
    if isinstance(S, CountSketch):
        return S
    if hasattr(S, "as_countsketch"):
        return S.as_countsketch()
    raise TypeError(f"value learning needs a CountSketch, got {type(S).__name__}")


class FewshotLoss:
    """||U_k^T S^T S U - I_0||_F^2 with A = U Sigma V^T."""

    name = "fewshot"
    has_gradient = True

    def __init__(self, k):
        if int(k) < 1:
            raise ValueError("k must be positive")
        self.k = int(k)

    def prepare(self, A):
        A = as_matrix(A)
        U, s, _ = np.linalg.svd(A, full_matrices=False)
        if numerical_rank(s, A.shape) < self.k:
            raise ValueError(f"k={self.k} exceeds rank(A)")
        return U

    def _parts(self, S, U):
        X = apply_left(S, U[:, :self.k])
        Y = apply_left(S, U)
        E = X.T @ Y
        E[:, :self.k] -= np.eye(self.k)
        return X, Y, E

    def value(self, S, U):
        return frob2(self._parts(S, U)[2])

    def gradient(self, S, U):
        X, Y, E = self._parts(S, U)
        W1 = 2.0 * Y @ E.T
        W2 = 2.0 * X @ E
        p = S.p
        return np.einsum("ij,ij->i", U[:, :self.k], W1[p]) + np.einsum("ij,ij->i", U, W2[p])


class SubspaceLoss:
    """||(A R^-1)^T (A R^-1) - I||_F with SA = Q R."""

    name = "subspace"
    has_gradient = True

    def prepare(self, A):
        A = as_matrix(A)
        return A, A.T @ A

    @staticmethod
    def _factor(SA):
        d = SA.shape[1]
        if SA.shape[0] < d:
            raise RankDeficiencyError(f"SA has {SA.shape[0]} rows, fewer than d={d}")
        R = np.linalg.qr(SA, mode="r")
        diag = np.abs(np.diag(R))
        if diag.max() == 0 or diag.min() <= max(SA.shape) * diag.max() * RANK_RTOL:
            raise RankDeficiencyError("SA is rank deficient; the subspace loss is undefined")
        return R

    def _M(self, S, ctx):
        A, H = ctx
        SA = apply_left(S, A)
        R = self._factor(SA)
        # M = R^-T H R^-1
        M = solve_triangular(R, solve_triangular(R, H, trans="T").T, trans="T")
        return SA, R, M

    def value(self, S, ctx):
        _, _, M = self._M(S, ctx)
        return float(np.linalg.norm(M - np.eye(M.shape[0]), "fro"))

    def gradient(self, S, ctx):
        A, H = ctx
        SA, R, M = self._M(S, ctx)
        d = M.shape[0]
        loss = float(np.linalg.norm(M - np.eye(d), "fro"))
        if loss == 0:
            return np.zeros(A.shape[0])
        Rinv = solve_triangular(R, np.eye(d))
        # G^-1 H G^-1 with G = R^T R is R^-1 M R^-T
        P = Rinv @ M @ Rinv.T
        Ginv = Rinv @ Rinv.T
        Gamma = 2.0 * (P - P @ H @ Ginv)
        Gamma = 0.5 * (Gamma + Gamma.T)
        return np.einsum("ij,ij->i", A @ Gamma, SA[S.p]) / loss


class EmpiricalLraLoss:
    """One-sided LRA error of S on A; gradient by central differences."""

    name = "empirical_lra"
    has_gradient = False

    def __init__(self, k):
        if int(k) < 1:
            raise ValueError("k must be positive")
        self.k = int(k)

    def prepare(self, A):
        return as_matrix(A)

    def value(self, S, A):
        return lra_one_sided(S, A, self.k).error

    def gradient(self, S, A):
        return fd_gradient(self, S, A)


def make_loss(kind, k=None):
    if kind == "fewshot":
        return FewshotLoss(k)
    if kind == "subspace":
        return SubspaceLoss()
    if kind == "empirical_lra":
        return EmpiricalLraLoss(k)
    raise ValueError(f"unknown loss kind {kind!r}")


def fewshot_loss(S, A, k):
    loss = FewshotLoss(k)
    return loss.value(_as_countsketch(S), loss.prepare(A))


def subspace_loss(S, A):
    loss = SubspaceLoss()
    return loss.value(S, loss.prepare(A))


def empirical_lra_loss(S, A, k):
    return lra_one_sided(S, A, k).error


def fd_gradient(loss, S, ctx, h=FD_STEP):
    S = _as_countsketch(S)
    v = np.array(S.v)
    steps = fd_steps(v, h)
    g = np.empty(len(v))
    for i in range(len(v)):
        vp, vm = v.copy(), v.copy()
        vp[i] += steps[i]
        vm[i] -= steps[i]
        g[i] = (loss.value(S.with_values(vp), ctx) - loss.value(S.with_values(vm), ctx)) / (2 * steps[i])
    return g


def gradient_check(loss, S, A, k=None, h=FD_STEP):
    """max |g_analytic - g_fd| / max(|g_fd|_inf, 1e-12) over all value coordinates."""
    if isinstance(loss, str):
        loss = make_loss(loss, k)
    if not loss.has_gradient:
        raise ValueError(f"{loss.name} has no analytic gradient to check")
    S = _as_countsketch(S)
    ctx = loss.prepare(A)
    g_a = loss.gradient(S, ctx)
    g_fd = fd_gradient(loss, S, ctx, h)
    return float(np.max(np.abs(g_a - g_fd)) / max(np.max(np.abs(g_fd)), 1e-12))


@dataclass(frozen=True)
class SgdConfig:
    lr: float = 0.1
    iters: int = 1000
    batch_size: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (self.lr > 0 and self.iters > 0 and self.batch_size > 0):
            raise ValueError("lr, iters and batch_size must be positive")


class ValueFit(NamedTuple):
    sketch: CountSketch
    trace: list
    best_iter: int


def _mean_loss(loss, S, ctxs):
    return float(np.mean([loss.value(S, c) for c in ctxs]))


def optimize_values(plan, Tr, loss, cfg, holdout=None):
    """Mini-batch gradient descent on the values; positions stay fixed.

    Returns the iterate with the lowest full training loss seen. The trace
    holds (iter, train_loss, holdout_loss) with iter 0 the starting point.
    """
    if isinstance(plan, PositionPlan):
        S0 = plan.to_countsketch()
    else:
        S0 = _as_countsketch(plan)
    mats = _matrices(Tr)
    if mats[0].shape[0] != S0.n:
        raise ValueError(f"sketch has {S0.n} columns but matrices have {mats[0].shape[0]} rows")
    ctxs = [loss.prepare(A) for A in mats]
    hold = [loss.prepare(A) for A in holdout] if holdout else []
    rng = np.random.default_rng(cfg.seed)
    bs = min(cfg.batch_size, len(ctxs))

    v = np.array(S0.v)
    S = S0
    start = _mean_loss(loss, S, ctxs)
    best_loss, best_v, best_iter = start, v.copy(), 0
    trace = [(0, start, _mean_loss(loss, S, hold) if hold else float("nan"))]
    if start == 0:
        return ValueFit(S, trace, 0)
    for it in range(1, cfg.iters + 1):
        batch = rng.choice(len(ctxs), size=bs, replace=False)
        try:
            g = np.mean([loss.gradient(S, ctxs[i]) for i in batch], axis=0)
            v = v - cfg.lr * g
            S = S0.with_values(v)
            cur = _mean_loss(loss, S, ctxs) if np.all(np.isfinite(v)) else float("inf")
        except (RankDeficiencyError, ValueError) as exc:
            raise DivergenceError(f"iteration {it}: {exc}", trace) from exc
        trace.append((it, cur, _mean_loss(loss, S, hold) if hold else float("nan")))
        if not np.isfinite(cur) or cur > DIVERGENCE_FACTOR * start:
            raise DivergenceError(f"loss {cur:.3g} exceeded {DIVERGENCE_FACTOR:g} x initial {start:.3g}", trace)
        if cur < best_loss:
            best_loss, best_v, best_iter = cur, v.copy(), it
    return ValueFit(S0.with_values(best_v), trace, best_iter)


def write_trace(path, trace):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "train_loss", "holdout_loss"])
        for it, tr, ho in trace:
            w.writerow([it, repr(float(tr)), repr(float(ho))])
