import math

import numpy as np
import pytest

from sketchlearn import second_order as so
from sketchlearn.datagen import gen_lasso_planted
from sketchlearn.errors import RankDeficiencyError
from sketchlearn.positions import learn_heavy_row_indices
from sketchlearn.sketch import (CountSketch, identity_sketch,
                                random_countsketch, to_dense, zero_sketch)

import oracles


@pytest.mark.parametrize("x, lam, expected", [
    ([3.0, 0.0], 1.0, [1.0, 0.0]),
    ([2.0, 1.0], 1.0, [1.0, 0.0]),
    ([0.2, -0.3], 1.0, [0.2, -0.3]),
    ([1.0, -1.0], 1.0, [0.5, -0.5]),
])
def test_project_l1_examples(x, lam, expected):
    assert np.allclose(so.project_l1(x, lam), expected, atol=1e-12)


def test_project_l1_matches_bisection():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.standard_normal(12) * 3
        lam = rng.uniform(0.1, 5)
        assert np.allclose(so.project_l1(x, lam), oracles.project_l1(x, lam), atol=1e-9)


def test_project_nuclear_examples():
    X = np.diag([3.0, 1.0])
    assert np.allclose(so.project_nuclear(X, 2.0), np.diag([2.0, 0.0]))
    Y = np.diag([0.5, 0.25])
    assert np.allclose(so.project_nuclear(Y, 1.0), Y)
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((5, 4))
    P = so.project_nuclear(Z, 1.5)
    assert np.linalg.svd(P, compute_uv=False).sum() <= 1.5 + 1e-9
    assert np.allclose(so.project_nuclear(P, 1.5), P, atol=1e-10)


def test_nuclear_ball_column_major():
    c = so.NuclearBall(1.0, 2, 3)
    X = np.arange(6.0).reshape(2, 3)
    x = X.ravel(order="F")
    assert np.allclose(c.project(x).reshape(2, 3, order="F"), so.project_nuclear(X, 1.0))
    assert c.contains(c.project(x))


def test_subproblem_unconstrained_matches_normal_equations():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((60, 5))
    SA = rng.standard_normal((20, 5))
    g = rng.standard_normal(5)
    u = so.ihs_subproblem(A, SA, g, so.Unconstrained(), np.zeros(5), iters=5000)
    assert np.allclose(u, np.linalg.solve(SA.T @ SA, g), atol=1e-6)


def test_subproblem_small_ball_pulls_to_origin():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((40, 4))
    SA = rng.standard_normal((16, 4))
    x_t = rng.standard_normal(4)
    u = so.ihs_subproblem(A, SA, rng.standard_normal(4), so.L1Ball(1e-9), x_t, iters=500)
    assert np.allclose(u, -x_t, atol=1e-6)


def test_subproblem_zero_sketch_raises():
    with pytest.raises(RankDeficiencyError):
        so.ihs_subproblem(np.ones((4, 2)), np.zeros((3, 2)), np.ones(2), so.Unconstrained(), np.zeros(2))


def test_identity_ihs_is_one_shot():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((50, 4))
    b = rng.standard_normal(50)
    prob = so.ConstrainedLsProblem(A, b)
    tr = so.ihs_solve(prob, so.identity_source(50), T=3, pg_iters=5000)
    assert tr.errors[1] <= 1e-9 * (1 + abs(tr.f_star))


def test_permutation_sketch_rate():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((30, 3))
    b = rng.standard_normal(30)
    S = CountSketch(30, 30, rng.permutation(30), np.ones(30))
    tr = so.ihs_solve(so.ConstrainedLsProblem(A, b), lambda t: S, T=4, pg_iters=5000)
    assert tr.rho_hat <= 0.5


def test_estimate_rate():
    assert so.estimate_rate([1.0, 0.5, 0.125]) == pytest.approx(0.5)
    assert so.estimate_rate([1.0, 0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        so.estimate_rate([1.0])


def test_heavy_rows_beat_classical_rate():
    wins = 0
    d, m = 9, 54
    for seed in range(10):
        probs = gen_lasso_planted(256, d, 10, 50.0, seed, draws=range(6))
        heavy = learn_heavy_row_indices([p.A for p in probs[:5]], budget=m // 2)
        test = probs[5]
        r_h = so.ihs_solve(test, so.heavy_rows_source(heavy, m, 256, seed), T=7).rho_hat
        r_c = so.ihs_solve(test, so.classical_source(m, 256, seed), T=7).rho_hat
        wins += r_h < r_c
    assert wins >= 8


def test_ihs_trace_csv(tmp_path):
    tr = so.IhsTrace(np.zeros((3, 2)), np.array([1.0, 0.1, 0.0]), 0.0, 0.0)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,error,log10_error"
    assert lines[2].startswith("1,0.1,") and lines[3] == "2,0.0,-inf"


def test_subspace_distortion_examples():
    A = np.random.default_rng(6).standard_normal((20, 3))
    assert so.subspace_distortion(identity_sketch(20), A) == pytest.approx((1.0, 0.0, 0.0), abs=1e-12)
    z1, z2, eps = so.subspace_distortion(zero_sketch(4, 20), A)
    assert (z1, z2) == (0.0, 1.0)
    S = CountSketch(20, 20, np.arange(20), 2 * np.ones(20))
    assert so.subspace_distortion(S, A) == pytest.approx((4.0, 3.0, 3.0))


def test_subspace_distortion_monte_carlo():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((200, 5))
    S = random_countsketch(40, 200, 3)
    _, z2, _ = so.subspace_distortion(S, A)
    mc = oracles.distortion_monte_carlo(to_dense(S), A, 20000, np.random.default_rng(1))
    assert mc <= z2 + 1e-9 and mc >= z2 - 0.02


def test_power_method_diag():
    assert so.power_method(np.diag([0.5, 0.1]), iters=300) == pytest.approx(0.5, abs=1e-10)


def test_estimate_z_exact_mode():
    A = np.random.default_rng(8).standard_normal((30, 3))
    z1, z2 = so.estimate_z(identity_sketch(30), A, eta=0.5, seed=0)
    assert z1 == pytest.approx(1.0, abs=1e-10) and z2 == pytest.approx(0.0, abs=1e-8)


def test_estimate_z_accuracy():
    good = 0
    eta = 0.3
    for seed in range(10):
        rng = np.random.default_rng([9, seed])
        A = rng.standard_normal((3000, 2))
        S = random_countsketch(100, 3000, [seed, 5])
        z1_true, z2_true, _ = so.subspace_distortion(S, A)
        z1, z2 = so.estimate_z(S, A, eta, seed)
        good += abs(z1 - math.sqrt(z1_true)) <= 2 * eta
    assert good >= 9


def test_choose_sketch():
    rng = np.random.default_rng(10)
    A = rng.standard_normal((400, 3))
    R = random_countsketch(60, 400, 1)
    S, meta = so.choose_sketch(zero_sketch(60, 400), R, A, 0.5, 0)
    assert S is R and meta["which"] == "random" and meta["ratio_learned"] == math.inf
    S, meta = so.choose_sketch(R, R, A, 0.5, 0)
    assert S is R and meta["which"] == "learned" and meta["ratio_learned"] == meta["ratio_random"]
    near = CountSketch(400, 400, np.arange(400), np.ones(400))
    S, meta = so.choose_sketch(near, random_countsketch(6, 400, 2), A, 0.5, 0)
    assert meta["which"] == "learned"


def test_fast_regression_perfect_embedding():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((40, 4))
    y = rng.standard_normal(4)
    res = so.fast_regression_solve(A, y, identity_sketch(40), lr=1.0, iters=10)
    assert res.errors[-1] <= 1e-6 and not res.diverged
    assert np.allclose(A.T @ A @ res.x, y, atol=1e-8)


def test_fast_regression_zero_target():
    A = np.random.default_rng(12).standard_normal((20, 3))
    res = so.fast_regression_solve(A, np.zeros(3), identity_sketch(20))
    assert res.errors[0] == 0.0 and np.all(res.x == 0)


def test_fast_regression_small_sketch_diverges():
    rng = np.random.default_rng(13)
    A = rng.standard_normal((500, 6)) * np.exp(2 * rng.standard_normal((500, 1)))
    y = rng.standard_normal(6)
    flagged = 0
    for seed in range(5):
        res = so.fast_regression_solve(A, y, random_countsketch(6, 500, seed), lr=1.0, iters=200)
        flagged += res.diverged
    assert flagged >= 1


def test_fast_regression_rank_deficient():
    A = np.random.default_rng(14).standard_normal((20, 3))
    with pytest.raises(RankDeficiencyError):
        so.fast_regression_solve(A, np.ones(3), zero_sketch(5, 20))


def test_problem_validation():
    with pytest.raises(ValueError):
        so.ConstrainedLsProblem(np.ones((4, 6)), np.ones(4), so.NuclearBall(1.0, 2, 2))
    with pytest.raises(ValueError):
        so.ConstrainedLsProblem(np.ones((4, 2)), np.ones(3))
