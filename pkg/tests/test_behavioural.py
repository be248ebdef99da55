import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recallgames.behavioural import (
    PublicHistories,
    behavioural_distance,
    behavioural_from_rule,
    behavioural_q_gradient,
    check_behavioural_variational,
    check_strict_spne,
    continuation_values,
    run_behavioural,
    validate_behavioural,
)
from recallgames.dynamics import QReplicatorConfig, q_gradient
from recallgames.equilibrium import random_small_spec
from recallgames.game import one_shot_utility
from recallgames.scenarios import pd_standard, pd_variant_noisy
from recallgames.strategies import StrategySpace
from recallgames.valuation import build_meta_game

C, D = 0, 1


def grim_rule(stage):
    cc = stage.profile_index((C, C))
    return lambda hist: (C, C) if all(a == cc for a in hist) else (D, D)


def grim(delta, recall=1):
    spec = pd_standard(delta, (recall, recall)).spec
    ph = PublicHistories(spec)
    return spec, ph, behavioural_from_rule(ph, grim_rule(spec.stage))


def test_all_defect_values():
    spec = pd_standard(0.9, (1, 1)).spec
    ph = PublicHistories(spec)
    prof = behavioural_from_rule(ph, lambda h: (D, D))
    assert np.allclose(continuation_values(spec, prof, ph).values, 10.0, atol=1e-9)


def test_zero_continuation_values_are_stage_payoffs():
    spec = pd_standard(0.0, (1, 1)).spec
    ph = PublicHistories(spec)
    rng = np.random.default_rng(0)
    prof = tuple(rng.dirichlet(np.ones(2), size=ph.count) for _ in range(2))
    table = continuation_values(spec, prof, ph)
    for h in range(ph.count):
        assert np.allclose(table.values[h], one_shot_utility(spec.stage, [prof[0][h], prof[1][h]]))


def test_grim_on_path_value():
    spec, ph, prof = grim(0.9)
    assert continuation_values(spec, prof, ph).value(0, ()) == pytest.approx(20.0, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), recall=st.integers(0, 2))
def test_values_solve_the_recursion(seed, recall):
    rng = np.random.default_rng(seed)
    spec = random_small_spec(rng).with_recall((recall, recall))
    ph = PublicHistories(spec)
    prof = tuple(rng.dirichlet(np.ones(2), size=ph.count) for _ in range(2))
    V = continuation_values(spec, prof, ph).values
    R = spec.stage.reward_table
    for h in range(ph.count):
        joint = np.outer(prof[0][h], prof[1][h]).ravel()
        rhs = sum(joint[a] * (R[a] + spec.delta * V[ph.successor[h, a]]) for a in range(4))
        assert np.allclose(V[h], rhs, atol=1e-10)


@pytest.mark.parametrize("q", [0.5, 1.0, 2.0])
def test_gradient_vanishes_at_strict_spne(q):
    spec, ph, prof = grim(0.9)
    assert all(np.all(g == 0) for g in behavioural_q_gradient(spec, prof, q, ph))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), q=st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_no_recall_reduces_to_the_meta_game(seed, q):
    rng = np.random.default_rng(seed)
    spec = random_small_spec(rng).with_recall((0, 0))
    prof = tuple(rng.dirichlet(np.ones(2)) for _ in range(2))
    meta = build_meta_game(StrategySpace(spec))
    expected = q_gradient(meta, prof, q)
    got = behavioural_q_gradient(spec, [p[None] for p in prof], q)
    for g, e in zip(got, expected):
        assert np.allclose(g[0], e, atol=1e-10)


def test_uniform_one_shot_gradient():
    spec = pd_standard(0.0, (1, 1)).spec
    ph = PublicHistories(spec)
    prof = tuple(np.full((ph.count, 2), 0.5) for _ in range(2))
    for g in behavioural_q_gradient(spec, prof, 0.0, ph):
        assert np.allclose(g, np.tile([-0.5, 0.5], (ph.count, 1)))


def test_spne_verdicts():
    assert check_strict_spne(*grim(0.9)[::2], grim(0.9)[1]).is_strict_spne
    spec, ph, prof = grim(0.3)
    report = check_strict_spne(spec, prof, ph)
    assert not report.is_strict_spne
    player, history, action, gain = report.worst
    assert ph.histories[history] == () and action == D and gain > 0
    all_c = behavioural_from_rule(ph, lambda h: (C, C))
    worst = check_strict_spne(spec.with_delta(0.9), all_c, ph).worst
    assert worst[2] == D and worst[3] > 0


def test_mixed_profiles_are_never_strict():
    spec, ph, _ = grim(0.9)
    prof = tuple(np.full((ph.count, 2), 0.5) for _ in range(2))
    assert not check_strict_spne(spec, prof, ph).is_strict_spne


def test_requires_perfect_monitoring_and_common_recall():
    with pytest.raises(ValueError):
        PublicHistories(pd_variant_noisy().spec)
    with pytest.raises(ValueError):
        PublicHistories(pd_standard(0.9, (0, 1)).spec)
    spec, ph, _ = grim(0.9)
    with pytest.raises(ValueError):
        validate_behavioural(ph, (np.full((ph.count, 2), 0.7), np.full((ph.count, 2), 0.5)))


def test_start_at_spne_is_constant():
    spec, ph, prof = grim(0.9)
    traj = run_behavioural(spec, prof, QReplicatorConfig(q=1.0, gamma=0.1, max_steps=20))
    assert behavioural_distance(traj.final, prof) == 0.0


def test_one_shot_learning_reaches_defection():
    spec = pd_standard(0.0, (1, 1)).spec
    ph = PublicHistories(spec)
    target = behavioural_from_rule(ph, lambda h: (D, D))
    rng = np.random.default_rng(2)
    start = tuple(rng.dirichlet(np.ones(2), size=ph.count) for _ in range(2))
    traj = run_behavioural(spec, start, QReplicatorConfig(q=1.0, gamma=1.0, p=0.6, max_steps=5000, stop_tolerance=1e-4), target)
    assert traj.distances[-1] < 1e-3


def test_grim_neighbourhood_converges():
    spec, ph, prof = grim(0.9)
    rng = np.random.default_rng(3)
    for _ in range(3):
        offsets = [rng.normal(size=t.shape) for t in prof]
        norm = np.sqrt(sum((o**2).sum() for o in offsets))
        start = []
        for t, o in zip(prof, offsets):
            moved = t + 0.02 * o / norm
            moved = np.clip(moved, 0, None)
            start.append(moved / moved.sum(axis=1, keepdims=True))
        traj = run_behavioural(spec, start, QReplicatorConfig(q=1.0, gamma=1.0, p=0.6, max_steps=3000, stop_tolerance=1e-6), prof)
        assert traj.distances[-1] < 1e-3


def test_variational_conditions_agree_with_spne_check():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(5):
        spec = random_small_spec(rng)
        ph = PublicHistories(spec)
        for _ in range(5):
            prof = tuple(np.eye(2)[rng.integers(2, size=ph.count)] for _ in range(2))
            strict = check_strict_spne(spec, prof, ph).is_strict_spne
            for q in (0.0, 1.0):
                var = check_behavioural_variational(spec, prof, q, seed=int(rng.integers(2**31)))
                assert (var.c1_holds and var.c2_holds) == strict
                checked += 1
    # the grim profile is strict and must pass as well
    spec, ph, prof = grim(0.9)
    var = check_behavioural_variational(spec, prof, 1.0)
    assert var.c1_holds and var.c2_holds
    assert checked == 50
