import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recallgames.dynamics import (
    QReplicatorConfig,
    check_on_simplex,
    project_simplex,
    project_simplex_rows,
    q_gradient,
    q_gradient_batch,
    q_transform,
    run_exact,
    run_exact_batch,
)
from recallgames.equilibrium import random_small_spec
from recallgames.strategies import StrategySpace, distance_to_class, pure_profile
from recallgames.valuation import build_meta_game, deviation_values, mixed_value

C, D = 0, 1


def test_uniform_one_shot_gradient(one_shot_pd):
    _, space, meta = one_shot_pd
    grad = q_gradient(meta, tuple(np.full(2, 0.5) for _ in range(2)), 0.0)
    for g in grad:
        assert np.allclose(g, [-0.5, 0.5], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(
    # closer to the boundary the true components drop below double-precision resolution
    x=st.floats(1e-3, 1 - 1e-3),
    y=st.floats(1e-3, 1 - 1e-3),
    q=st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.7]),
)
def test_defection_component_always_positive(one_shot_pd, x, y, q):
    _, _, meta = one_shot_pd
    grad = q_gradient(meta, (np.array([x, 1 - x]), np.array([y, 1 - y])), q)
    for g in grad:
        assert g[C] < 0 < g[D]


@pytest.mark.parametrize("q", [0.5, 1.0, 2.0])
def test_vertex_gradient_vanishes_for_positive_q(pd_space, pd_meta, q):
    rng = np.random.default_rng(int(10 * q))
    for _ in range(10):
        prof = pure_profile(pd_space, [int(rng.integers(k)) for k in pd_space.strategy_counts])
        assert all(np.all(g == 0) for g in q_gradient(pd_meta, prof, q))


def test_zero_to_the_zero_is_one():
    w = np.array([0.0, 1.0])
    v = np.array([3.0, 1.0])
    assert np.allclose(q_transform(w, v, 0.0), [1.0, -1.0])
    assert np.allclose(q_transform(w, v, 1.0), [0.0, 0.0])
    with pytest.raises(ValueError):
        q_transform(w, v, -1.0)


def test_batch_gradient_matches_single(pd_space, pd_meta):
    rng = np.random.default_rng(0)
    batch = [rng.dirichlet(np.ones(k), size=7) for k in pd_space.strategy_counts]
    for q in (0.0, 1.0, 2.0):
        grads = q_gradient_batch(pd_meta, batch, q)
        for b in range(7):
            single = q_gradient(pd_meta, [w[b] for w in batch], q)
            for g, s in zip(grads, single):
                assert np.allclose(g[b], s, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_euclidean_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    meta = build_meta_game(StrategySpace(random_small_spec(rng)))
    h = 1e-6
    for _ in range(5):
        prof = tuple(rng.dirichlet(np.ones(k) * 3) for k in meta.strategy_counts)
        grad = q_gradient(meta, prof, 0.0)
        for i, w in enumerate(prof):
            K = len(w)
            for k in range(K):
                # sum-zero direction keeps the perturbed profile on the simplex
                d = np.eye(K)[k] - 1.0 / K
                plus = list(prof)
                minus = list(prof)
                plus[i], minus[i] = w + h * d, w - h * d
                fd = (mixed_value(meta, plus)[i] - mixed_value(meta, minus)[i]) / (2 * h)
                assert abs(fd - grad[i][k]) <= 1e-4


def test_projection_examples():
    assert np.allclose(project_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
    assert np.allclose(project_simplex(np.array([0.6, 0.6])), [0.5, 0.5])
    p = np.array([0.2, 0.3, 0.5])
    assert np.allclose(project_simplex(p), p, atol=1e-15)
    with pytest.raises(ValueError):
        project_simplex(np.array([np.nan, 1.0]))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), dim=st.sampled_from([1, 2, 5, 33]))
def test_projection_kkt(seed, dim):
    x = np.random.default_rng(seed).normal(scale=2.0, size=dim)
    y = project_simplex(x)
    assert abs(y.sum() - 1.0) <= 1e-10 and np.all(y >= 0)
    theta = (x - y)[y > 0]
    # every positive component is shifted by the same threshold, and zeros sit below it
    assert np.ptp(theta) <= 1e-10
    assert np.all(x[y == 0] <= theta[0] + 1e-10)


def test_projection_ties_are_deterministic():
    x = np.array([0.5, 0.5, 0.5, -1.0])
    assert np.array_equal(project_simplex_rows(np.stack([x, x])), np.stack([project_simplex(x)] * 2))


@pytest.mark.parametrize("q", [0.0, 1.0])
def test_one_shot_pd_converges_to_defection(one_shot_pd, q):
    scenario, space, meta = one_shot_pd
    target = scenario.profile(space, "all_d")
    cfg = QReplicatorConfig(q=q, gamma=1.0, p=0.6, m=1, max_steps=10_000, stop_tolerance=1e-4)
    rng = np.random.default_rng(7)
    starts = [rng.dirichlet(np.ones(2), size=10) for _ in range(2)]
    run = run_exact_batch(meta, starts, cfg, target)
    assert run.distances.max() < 1e-3


def test_log_barrier_dynamics_move_toward_defection(one_shot_pd):
    scenario, space, meta = one_shot_pd
    target = scenario.profile(space, "all_d")
    start = (np.array([0.6, 0.4]), np.array([0.3, 0.7]))
    traj = run_exact(meta, start, QReplicatorConfig(q=2.0, gamma=1.0, p=0.6, max_steps=500, record_every=50), target)
    dists = [r.distance for r in traj.records]
    assert all(b < a for a, b in zip(dists, dists[1:]))


@pytest.mark.parametrize("q", [0.0, 0.5, 1.0, 2.0])
def test_strict_equilibrium_is_a_fixed_point(pd, pd_space, pd_meta, q):
    grim = pd.profile(pd_space, "grim_trigger")
    traj = run_exact(pd_meta, grim, QReplicatorConfig(q=q, gamma=0.1, max_steps=25))
    for prof in traj.profiles:
        assert all(np.allclose(a, b, atol=1e-12) for a, b in zip(prof, grim))


def test_zero_step_size_keeps_the_start(pd_space, pd_meta):
    start = tuple(np.random.default_rng(1).dirichlet(np.ones(k)) for k in pd_space.strategy_counts)
    traj = run_exact(pd_meta, start, QReplicatorConfig(gamma=0.0, max_steps=10))
    assert all(np.allclose(a, b, rtol=0, atol=1e-15) for a, b in zip(traj.final, start))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), q=st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_small_step_improves_each_players_value(pd_space, pd_meta, seed, q):
    rng = np.random.default_rng(seed)
    prof = tuple(rng.dirichlet(np.ones(k)) for k in pd_space.strategy_counts)
    grad = q_gradient(pd_meta, prof, q)
    for i, w in enumerate(prof):
        moved = list(prof)
        moved[i] = project_simplex(w + 1e-4 * grad[i])
        before = w @ deviation_values(pd_meta, prof, i)
        after = moved[i] @ deviation_values(pd_meta, prof, i)
        assert after >= before - 1e-9


def test_batch_runs_match_single_runs(pd, pd_space, pd_meta):
    rng = np.random.default_rng(5)
    starts = [rng.dirichlet(np.ones(k), size=4) for k in pd_space.strategy_counts]
    target = pd.profile(pd_space, "grim_trigger")
    cfg = QReplicatorConfig(q=1.0, gamma=0.3, p=0.8, m=2, max_steps=60, stop_tolerance=0.2)
    batch = run_exact_batch(pd_meta, starts, cfg, target)
    for b in range(4):
        single = run_exact(pd_meta, [w[b] for w in starts], cfg, target)
        assert single.steps == batch.steps[b]
        for w, s in zip(batch.final, single.final):
            assert np.allclose(w[b], s, atol=1e-12)
        assert batch.distances[b] == pytest.approx(distance_to_class(pd_space, single.final, target), abs=1e-12)


def test_iterates_stay_on_the_simplex(pd_space, pd_meta):
    start = tuple(np.random.default_rng(2).dirichlet(np.ones(k)) for k in pd_space.strategy_counts)
    traj = run_exact(pd_meta, start, QReplicatorConfig(q=0.0, gamma=2.0, p=0.6, max_steps=200))
    for prof in traj.profiles:
        check_on_simplex(prof)
    with pytest.raises(AssertionError):
        check_on_simplex([np.array([0.7, 0.7])])


def test_config_validation():
    for bad in (dict(p=0.5), dict(p=1.2), dict(m=0), dict(gamma=-1.0), dict(q=-0.1), dict(record_every=0)):
        with pytest.raises(ValueError):
            QReplicatorConfig(**bad)
    cfg = QReplicatorConfig(gamma=(0.1, 0.2), p=1.0, m=10)
    assert np.allclose(cfg.step_sizes(0, 2), [0.01, 0.02])
    with pytest.raises(ValueError):
        cfg.gammas(3)
