"""Second-order sketching: Iterative Hessian Sketch and friends.

The constrained problems are min over x in C of f(x) = 0.5 ||Ax - b||^2 with
C an l1 ball, a nuclear-norm ball (on a d1 x d2 matrix stored column-major
in x) or all of R^d. IHS replaces the Hessian A^T A in each Newton-type step
by (S_t A)^T (S_t A) for a fresh sketch S_t.
"""
import csv
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import RankDeficiencyError
from .linalg import RANK_RTOL, as_matrix, orth_basis, qr
from .sketch import CountSketch, apply_left, heavy_row_sketch, identity_sketch, random_countsketch


def project_l1(x, lam):
    """Euclidean projection onto {||x||_1 <= lam} (sort-based soft threshold)."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    if a.sum() <= lam:
        return x.copy()
    u = np.sort(a.ravel())[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(u) + 1)
    j = np.nonzero(u * ks > css - lam)[0][-1]
    theta = (css[j] - lam) / (j + 1)
    return np.sign(x) * np.maximum(a - theta, 0.0)


def project_nuclear(X, rho):
    """Projection onto {||X||_* <= rho}: project the singular values onto the l1 ball."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    X = np.asarray(X, dtype=float)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if s.sum() <= rho:
        return X.copy()
    return (U * project_l1(s, rho)) @ Vt


@dataclass(frozen=True)
class Unconstrained:
    def project(self, x):
        return x

    def contains(self, x, tol=1e-9):
        return True


@dataclass(frozen=True)
class L1Ball:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")

    def project(self, x):
        return project_l1(x, self.lam)

    def contains(self, x, tol=1e-9):
        return np.abs(x).sum() <= self.lam + tol


@dataclass(frozen=True)
class NuclearBall:
    """Nuclear-norm ball on d1 x d2 matrices stored column-major in a vector."""

    rho: float
    d1: int
    d2: int

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")

    def project(self, x):
        X = np.reshape(x, (self.d1, self.d2), order="F")
        return project_nuclear(X, self.rho).ravel(order="F")

    def contains(self, x, tol=1e-9):
        X = np.reshape(x, (self.d1, self.d2), order="F")
        return np.linalg.svd(X, compute_uv=False).sum() <= self.rho + tol


@dataclass(eq=False)
class ConstrainedLsProblem:
    A: np.ndarray
    b: np.ndarray
    constraint: object = field(default_factory=Unconstrained)

    def __post_init__(self):
        self.A = as_matrix(self.A)
        b = np.asarray(self.b, dtype=float)
        if b.ndim == 2 and b.shape[1] == 1:
            b = b[:, 0]
        if b.shape != (self.A.shape[0],):
            raise ValueError(f"b must have length {self.A.shape[0]}, got shape {b.shape}")
        self.b = b
        if isinstance(self.constraint, NuclearBall):
            c = self.constraint
            if c.d1 * c.d2 != self.A.shape[1]:
                raise ValueError(f"A has {self.A.shape[1]} columns, expected d1*d2={c.d1 * c.d2}")
        self._reference = None

    @property
    def d(self):
        return self.A.shape[1]

    def objective(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(r @ r)

    def reference(self, iters=100_000, tol=1e-10):
        """(x*, f*) from a long projected-gradient run; cached."""
        if self._reference is None:
            x = reference_solution(self, iters, tol)
            self._reference = (x, self.objective(x))
        return self._reference


def _sigma_max(M):
    return float(np.linalg.norm(M, 2)) if M.size else 0.0


def projected_gradient(grad, obj, project, x0, L, iters, tol=0.0):
    """Accelerated projected gradient (FISTA with objective restart), step 1/L."""
    x = project(np.asarray(x0, dtype=float))
    y, t, fx = x.copy(), 1.0, obj(x)
    for _ in range(int(iters)):
        x_new = project(y - grad(y) / L)
        f_new = obj(x_new)
        if f_new > fx:
            # restart momentum from the last iterate
            y, t = x.copy(), 1.0
            x_new = project(x - grad(x) / L)
            f_new = obj(x_new)
        step = np.linalg.norm(x_new - x) * L
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, t = x_new, f_new, t_new
        if step < tol:
            break
    return x


def reference_solution(problem, iters=100_000, tol=1e-10):
    A, b, C = problem.A, problem.b, problem.constraint
    L = _sigma_max(A) ** 2
    if L == 0:
        return C.project(np.zeros(problem.d))
    if isinstance(C, Unconstrained):
        return np.linalg.lstsq(A, b, rcond=None)[0]
    AtA, Atb = A.T @ A, A.T @ b
    return projected_gradient(lambda x: AtA @ x - Atb, problem.objective, C.project,
                              np.zeros(problem.d), L, iters, tol)


def ihs_subproblem(A, SA, grad_term, constraint, x_t, iters=200):
    """Minimise 0.5||SA u||^2 - <grad_term, u> subject to x_t + u in C; returns u."""
    SA = np.asarray(SA, dtype=float)
    L = _sigma_max(SA) ** 2
    if L == 0:
        raise RankDeficiencyError("sketched matrix SA is zero; subproblem is unbounded")
    H = SA.T @ SA
    g = np.asarray(grad_term, dtype=float)
    return projected_gradient(
        lambda u: H @ u - g,
        lambda u: 0.5 * float(u @ H @ u) - float(g @ u),
        lambda u: constraint.project(x_t + u) - x_t,
        np.zeros_like(g), L, iters)


@dataclass
class IhsTrace:
    iterates: np.ndarray
    errors: np.ndarray
    f_star: float
    rho_hat: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "error", "log10_error"])
            for t, e in enumerate(self.errors):
                w.writerow([t, repr(float(e)), repr(math.log10(e)) if e > 0 else "-inf"])


def estimate_rate(errors):
    """rho_hat = (e_T / e_1)^(1/T) over errors e_0..e_T."""
    T = len(errors) - 1
    if T < 1:
        raise ValueError("need at least one iteration")
    e1, eT = errors[1], errors[T]
    if e1 <= 0 or eT <= 0:
        return 0.0
    return float((eT / e1) ** (1.0 / T))


def ihs_solve(problem, sketch_source, T, pg_iters=200, x0=None):
    """Run T IHS updates; ``sketch_source(t)`` returns the sketch for step t."""
    if T < 1:
        raise ValueError("T must be at least 1")
    A, b, C = problem.A, problem.b, problem.constraint
    x = C.project(np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float))
    xs = [x]
    for t in range(int(T)):
        SA = apply_left(sketch_source(t), A)
        u = ihs_subproblem(A, SA, A.T @ (b - A @ x), C, x, pg_iters)
        x = x + u
        xs.append(x)
    _, f_star = problem.reference()
    errors = np.array([problem.objective(x) - f_star for x in xs])
    return IhsTrace(np.array(xs), errors, f_star, estimate_rate(errors))


def classical_source(m, n, seed):
    return lambda t: random_countsketch(m, n, [seed, t])


def identity_source(n):
    S = identity_sketch(n)
    return lambda t: S


def heavy_rows_source(heavy, m, n, seed, values=None):
    """Heavy rows keep identity rows (scaled by learned values if given);
    the remaining rows are re-hashed with fresh buckets and signs each step.
    Learned tail values keep their magnitudes under the fresh signs."""
    heavy = np.unique(np.asarray(heavy, dtype=np.int64))
    m_tail = m - len(heavy)
    if m_tail < 1:
        raise ValueError(f"m={m} leaves no room for a tail beyond {len(heavy)} heavy rows")

    def source(t):
        S = heavy_row_sketch(heavy, m_tail, n, [seed, t])
        if values is None:
            return S
        v = np.array(S.v)
        learned = np.asarray(values, dtype=float)
        v[heavy] = learned[heavy]
        rest = np.setdiff1d(np.arange(n), heavy)
        v[rest] = np.sign(v[rest]) * np.abs(learned[rest])
        return CountSketch(S.m, n, S.p, v)
    return source


def subspace_distortion(S, A):
    """Exact (z1, z2, eps) for S on col(A) via an orthonormal basis U."""
    A = as_matrix(A)
    U = orth_basis(A)
    if U.shape[1] == 0:
        raise ValueError("A must be nonzero")
    SU = apply_left(S, U)
    s = np.linalg.svd(SU, compute_uv=False)
    s = np.concatenate([s, np.zeros(U.shape[1] - len(s))])
    smax2, smin2 = float(s[0] ** 2), float(s[-1] ** 2)
    z2 = max(abs(smax2 - 1.0), abs(smin2 - 1.0))
    return smin2, z2, z2


def power_method(M, iters=300, seed=0):
    """Rayleigh quotient of the dominant eigenvector of symmetric M."""
    M = np.asarray(M, dtype=float)
    x = np.random.default_rng(seed).standard_normal(M.shape[0])
    x /= np.linalg.norm(x)
    for _ in range(int(iters)):
        y = M @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        x = y / ny
    return float(x @ M @ x)


def _extreme_abs_eigenvalue(M, iters, seed):
    shift = np.linalg.norm(M, "fro")
    eye = np.eye(M.shape[0])
    lam_max = power_method(M + shift * eye, iters, seed) - shift
    lam_min = shift - power_method(shift * eye - M, iters, seed + 1)
    return max(abs(lam_max), abs(lam_min))


def estimate_z(S, A, eta, seed, power_iters=300):
    """(z1_hat, z2_hat): sigma_min(S A R^-1) and ||(S A R^-1)^T (S A R^-1) - I||_op.

    R comes from a QR of T A where T is a CountSketch with ceil(9 d^2 / eta^2)
    rows; when that is at least n, T is the identity.
    """
    A = as_matrix(A)
    n, d = A.shape
    m_T = int(math.ceil(9 * d * d / eta**2))
    R = None
    for attempt in range(2):
        T = identity_sketch(n) if m_T >= n else random_countsketch(m_T, n, [seed, attempt])
        R = qr(apply_left(T, A)).R
        diag = np.abs(np.diag(R))
        if diag.min() > d * diag.max() * RANK_RTOL:
            break
        if m_T >= n:
            raise RankDeficiencyError("A is rank deficient")
    else:
        raise RankDeficiencyError("T A is rank deficient after one retry")
    B = solve_triangular(R, apply_left(S, A).T, trans="T").T
    s = np.linalg.svd(B, compute_uv=False)
    z1 = float(s[-1]) if len(s) == d else 0.0
    z2 = _extreme_abs_eigenvalue(B.T @ B - np.eye(d), power_iters, seed)
    return z1, z2


def _ratio(z1, z2):
    return math.inf if z1 == 0 else z2 / z1


def choose_sketch(S_learned, S_random, A, eta, seed):
    """Pick the sketch with the smaller z2_hat / z1_hat; ties keep the learned one."""
    z_l = estimate_z(S_learned, A, eta, seed)
    z_r = estimate_z(S_random, A, eta, seed)
    r_l, r_r = _ratio(*z_l), _ratio(*z_r)
    which = "learned" if r_l <= r_r else "random"
    meta = {"which": which, "ratio_learned": r_l, "ratio_random": r_r,
            "z_learned": z_l, "z_random": z_r}
    return (S_learned if which == "learned" else S_random), meta


@dataclass
class FastRegressionResult:
    x: np.ndarray
    errors: list
    diverged: bool


def fast_regression_solve(A, y, S, lr=1.0, iters=50, tol=0.0, blowup=1e6):
    """Solve A^T A x = y with the sketch-based preconditioner R = QR(SA)^-1.

    Gradient descent runs on the preconditioned system (AR)^T (AR) z = R^T y,
    and x = R z. Errors are ||A^T A R z - y|| / ||y|| per step (index 0 is the
    start). Divergence (error > blowup * start or non-finite) stops the run
    and is reported rather than raised.
    """
    A = as_matrix(A)
    y = np.asarray(y, dtype=float).reshape(-1)
    n, d = A.shape
    if y.shape != (d,):
        raise ValueError(f"y must have length {d}")
    SA = apply_left(S, A)
    if SA.shape[0] < d:
        raise RankDeficiencyError(f"SA has fewer than {d} rows")
    R_qr = qr(SA).R
    diag = np.abs(np.diag(R_qr))
    if diag.max() == 0 or diag.min() <= d * diag.max() * RANK_RTOL:
        raise RankDeficiencyError("SA is rank deficient")
    Rinv = solve_triangular(R_qr, np.eye(d))
    AR = A @ Rinv
    H = AR.T @ AR
    rhs = Rinv.T @ y
    ny = np.linalg.norm(y)
    z = np.zeros(d)

    def err(z):
        return 0.0 if ny == 0 else float(np.linalg.norm(A.T @ (AR @ z) - y) / ny)

    errors = [err(z)]
    diverged = False
    for _ in range(int(iters)):
        z = z - lr * (H @ z - rhs)
        e = err(z)
        errors.append(e)
        if not np.isfinite(e) or e > blowup * max(errors[0], 1e-300):
            diverged = True
            break
        if e <= tol:
            break
    return FastRegressionResult(Rinv @ z, errors, diverged)
