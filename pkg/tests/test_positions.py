import itertools

import numpy as np
import pytest

from sketchlearn import positions as pos
from sketchlearn.datagen import gen_spiked, spiked_heavy_rows
from sketchlearn.linalg import best_rank_k_error
from sketchlearn.lra import lra_one_sided
from sketchlearn.sketch import CountSketch, apply_left


def _spiked_set(seed, n=32, d=2048, s=4, ell=10.0, count=5):
    return [gen_spiked(n, d, s, ell, seed, t) for t in range(count)], spiked_heavy_rows(n, s, seed)


def test_training_set_validation():
    A = np.ones((3, 2))
    ts = pos.TrainingSet([A, A, A], [0, 1], [2])
    assert ts.shape == (3, 2) and len(ts.train_matrices) == 2
    with pytest.raises(ValueError):
        pos.TrainingSet([A, np.ones((2, 2))])
    with pytest.raises(ValueError):
        pos.TrainingSet([A, A], [0], [0])
    with pytest.raises(ValueError):
        pos.TrainingSet([])


def test_plan_round_trip_and_validation():
    plan = pos.PositionPlan(3, [0, 2, 1], [1, -1, 1], "greedy")
    d = plan.to_dict()
    assert list(d) == ["m", "p", "signs", "provenance"]
    back = pos.PositionPlan.from_dict(d)
    assert np.array_equal(back.p, plan.p) and back.provenance == "greedy"
    with pytest.raises(ValueError):
        pos.PositionPlan(2, [0, 2], [1, 1], "greedy")


def test_greedy_m_equals_n_isolates_everything():
    rng = np.random.default_rng(0)
    mats = [rng.standard_normal((6, 8)) for _ in range(2)]
    plan = pos.greedy_positions(mats, 6, 2)
    assert sorted(plan.p) == list(range(6))
    S = plan.to_countsketch()
    total = sum(lra_one_sided(S, A, 2).error for A in mats)
    assert total == pytest.approx(sum(best_rank_k_error(A, 2) for A in mats), rel=1e-9)


def test_greedy_proxy_matches_one_sided_error():
    rng = np.random.default_rng(1)
    mats = [rng.standard_normal((20, 15)) for _ in range(3)]
    plan = pos.greedy_positions(mats, 5, 2, order="given")
    S = plan.to_countsketch()
    exact = sum(lra_one_sided(S, A, 2).error for A in mats)
    assert plan.meta["objective_trace"][-1] == pytest.approx(exact, rel=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_greedy_spiked_heavy_rows_isolated(seed):
    mats, heavy = _spiked_set(seed)
    plan = pos.greedy_positions(mats, 8, 8)
    buckets = plan.p[heavy]
    assert len(set(buckets)) == 4
    light = np.setdiff1d(np.arange(32), heavy)
    assert not set(plan.p[light]) & set(buckets)


def test_greedy_orthogonal_rows_norms_4411():
    A = np.diag([4.0, 4.0, 1.0, 1.0])
    plan = pos.greedy_positions([A], 2, 2)
    assert plan.p[0] != plan.p[1]
    best = min(
        lra_one_sided(CountSketch(2, 4, p, s), A, 2).error
        for p in itertools.product(range(2), repeat=4)
        for s in itertools.product((1.0, -1.0), repeat=4))
    assert lra_one_sided(plan.to_countsketch(), A, 2).error == pytest.approx(best, abs=1e-9)


def test_greedy_isolates_prefix_while_buckets_remain():
    rng = np.random.default_rng(3)
    mats = [rng.standard_normal((12, 30)) for _ in range(2)]
    m = 5
    plan = pos.greedy_positions(mats, m, 3)
    first = plan.meta["order"][:m]
    assert sorted(plan.p[first]) == list(range(m))


def test_greedy_objective_trace_non_increasing():
    rng = np.random.default_rng(4)
    mats = [rng.standard_normal((15, 8)) for _ in range(2)]
    m = 6
    plan = pos.greedy_positions(mats, m, 2)
    tr = np.array(plan.meta["objective_trace"])
    assert np.all(np.diff(tr[:m]) <= 1e-9 * tr[0])
    # once every bucket is used the committed candidate is still the minimum, so the
    # objective after the last step equals the proxy of the final plan
    S = plan.to_countsketch()
    assert tr[-1] == pytest.approx(sum(lra_one_sided(S, A, 2).error for A in mats), rel=1e-9)


def test_greedy_ties_choose_lowest_bucket_plus_sign():
    plan = pos.greedy_positions([np.zeros((3, 2)) + np.eye(3, 2) * 0], 2, 1)
    assert plan.p.tolist() == [0, 0, 0] and plan.signs.tolist() == [1.0, 1.0, 1.0]


def test_greedy_exact_objective_runs():
    rng = np.random.default_rng(5)
    mats = [rng.standard_normal((8, 6)) for _ in range(2)]
    plan = pos.greedy_positions(mats, 3, 2, objective="exact")
    assert plan.p.shape == (8,) and plan.meta["objective"] == "exact"
    with pytest.raises(ValueError):
        pos.greedy_positions(mats, 3, 2, objective="nope")


def test_greedy_is_deterministic():
    rng = np.random.default_rng(6)
    mats = [rng.standard_normal((10, 6)) for _ in range(2)]
    a, b = pos.greedy_positions(mats, 4, 2), pos.greedy_positions(mats, 4, 2)
    assert a.to_dict() == b.to_dict()


def test_inner_product_clusters():
    rng = np.random.default_rng(7)
    m, d = 4, 6
    dirs = np.eye(d)[:m]
    cluster = np.repeat(np.arange(m), 5)
    coef = rng.uniform(0.5, 2, len(cluster)) * rng.choice([-1, 1], len(cluster))
    A = coef[:, None] * dirs[cluster]
    S1, S2, meta = pos.inner_product_positions(A, m, 2, 3)
    sampled_clusters = set(cluster[meta["sampled"]])
    SA = apply_left(S1, A)
    checked = 0
    for c in sampled_clusters:
        rows = np.nonzero(cluster == c)[0]
        b = S1.p[rows]
        assert len(set(b)) == 1
        # rows of unsampled clusters have zero inner product everywhere and fall to bucket 0
        if set(cluster[S1.p == b[0]]) == {c}:
            assert np.allclose(np.abs(SA[b[0]]), np.linalg.norm(coef[rows]) * dirs[c])
            checked += 1
    assert checked >= 1


def test_inner_product_sampled_rows_own_bucket():
    rng = np.random.default_rng(8)
    A = rng.standard_normal((30, 10))
    S1, S2, meta = pos.inner_product_positions(A, 8, 3, 4)
    seen = set()
    for j, c in enumerate(meta["sampled"]):
        if c in seen:
            continue
        seen.add(c)
        assert S1.p[c] == j and meta["signs"][c] == 1.0
    D2 = np.zeros((8, 30))
    D2[S2.p, np.arange(30)] = S2.v
    for c in seen:
        assert D2[S2.p[c], c] == 1.0
    assert np.count_nonzero(S2.v) == len(seen)


def test_inner_product_saturation():
    A = np.random.default_rng(9).standard_normal((10, 4))
    S1, S2, meta = pos.inner_product_positions(A, 10, 2, 0)
    counts = np.bincount(S1.p, minlength=10)
    assert counts.sum() == 10
    with pytest.raises(ValueError):
        pos.inner_product_positions(A, 11, 2, 0)


def test_inner_product_zero_rows_flagged():
    A = np.random.default_rng(10).standard_normal((12, 5))
    A[[2, 7]] = 0
    S1, _, meta = pos.inner_product_positions(A, 4, 2, 1)
    assert meta["zero_rows"] == [2, 7]
    assert S1.p[2] == 0 and S1.v[2] == 0 and S1.v[7] == 0


def test_heavy_rows_identical_matrices():
    A = np.random.default_rng(11).standard_normal((20, 3)) * 0.1
    A[[0, 1]] *= 100
    assert pos.learn_heavy_row_indices([A, A, A], 5.0, 2).tolist() == [0, 1]
    assert pos.learn_heavy_row_indices([A], 5.0, 0).tolist() == []


def test_heavy_rows_planted():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        mats = []
        for _ in range(20):
            A = rng.standard_normal((100, 5))
            A[[3, 7, 11]] *= 50
            mats.append(A)
        assert {3, 7, 11} <= set(pos.learn_heavy_row_indices(mats, 5.0, 5).tolist())


def test_heavy_rows_permutation_covariant():
    rng = np.random.default_rng(12)
    mats = []
    for t in range(6):
        A = rng.standard_normal((40, 4))
        A[[1, 5, 9][: 1 + t % 3]] *= 30
        mats.append(A)
    I = pos.learn_heavy_row_indices(mats, 5.0, 3)
    perm = rng.permutation(40)
    J = pos.learn_heavy_row_indices([A[perm] for A in mats], 5.0, 3)
    inv = np.argsort(perm)
    assert sorted(inv[I]) == sorted(J.tolist())


def test_lsh_identity_and_permutation():
    rng = np.random.default_rng(13)
    ref = rng.standard_normal((6, 20)) * 10
    assert pos.lsh_heavy_row_match(ref, ref, 3, 0).tolist() == list(range(6))
    perm = rng.permutation(6)
    matched = pos.lsh_heavy_row_match(ref, ref[perm], 3, 0)
    assert np.array_equal(perm[matched], np.arange(6))


def test_lsh_noisy_permutation_recovery():
    rates = []
    for seed in range(20):
        rng = np.random.default_rng([14, seed])
        n, d, h = 200, 50, 10
        A = rng.standard_normal((n, d)) / np.sqrt(d)
        A[:h] *= 10
        noise = rng.standard_normal((n, d))
        noise *= 0.1 * np.linalg.norm(A, axis=1, keepdims=True) / np.linalg.norm(noise, axis=1, keepdims=True)
        perm = rng.permutation(n)
        test = (A + noise)[perm]
        matched = pos.lsh_heavy_row_match(A[:h], test, 3, seed)
        rates.append(np.mean(perm[matched] == np.arange(h)))
    assert np.mean(rates) >= 0.7
