import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recallgames.dynamics import QReplicatorConfig
from recallgames.folk import (
    basin_experiment,
    build_trigger_profile,
    feasible_ir_set,
    in_hull,
    mixed_minmax,
    mixed_minmax_details,
    pure_minmax,
    required_recall,
)
from recallgames.game import StageGame
from recallgames.scenarios import matching_pennies, pd_standard, pd_variant_noisy, prisoners_dilemma
from recallgames.strategies import CapacityError, StrategySpace, distance_to_class
from recallgames.valuation import build_meta_game, mixed_value, per_period_values

C, D = 0, 1


def grid_minmax(game, player, steps=20_001):
    """Brute-force mixed minmax against a two-action opponent over a fine grid."""
    table = np.moveaxis(game.rewards[..., player], player, 0)
    ys = np.linspace(0.0, 1.0, steps)
    payoffs = table[:, 0][:, None] * ys[None, :] + table[:, 1][:, None] * (1 - ys[None, :])
    return payoffs.max(axis=0).min()


def test_pd_minmax():
    g = prisoners_dilemma()
    assert [mixed_minmax(g, i) for i in range(2)] == pytest.approx([1.0, 1.0], abs=1e-9)
    assert [pure_minmax(g, i) for i in range(2)] == [1.0, 1.0]


def test_matching_pennies_minmax(pennies):
    g = pennies.spec.stage
    assert mixed_minmax(g, 0) == pytest.approx(0.0, abs=1e-9)
    assert pure_minmax(g, 0) == 1.0
    assert pure_minmax(g, 1) == 1.0


def test_single_action_opponent_and_trivial_game():
    g = StageGame(np.array([[[3.0, 0.0]], [[5.0, 1.0]], [[-1.0, 2.0]]]))
    assert mixed_minmax(g, 0) == pytest.approx(5.0)
    assert pure_minmax(g, 0) == 5.0
    one = StageGame(np.array([[[4.0, -2.0]]]))
    assert mixed_minmax(one, 1) == pytest.approx(-2.0) and pure_minmax(one, 1) == -2.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), own=st.integers(1, 4))
def test_lp_minmax_matches_grid_oracle(seed, own):
    g = StageGame(np.random.default_rng(seed).uniform(-1, 1, size=(own, 2, 2)))
    assert mixed_minmax(g, 0) == pytest.approx(grid_minmax(g, 0), abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), counts=st.lists(st.integers(1, 3), min_size=2, max_size=3))
def test_pure_minmax_dominates_mixed(seed, counts):
    g = StageGame(np.random.default_rng(seed).normal(size=(*counts, len(counts))))
    for i in range(len(counts)):
        assert pure_minmax(g, i) >= mixed_minmax(g, i) - 1e-8


def test_three_player_minmax_is_flagged_inexact():
    g = StageGame(np.random.default_rng(0).normal(size=(2, 2, 2, 3)))
    assert not mixed_minmax_details(g, 0).exact
    assert mixed_minmax_details(prisoners_dilemma(), 0).exact


def test_pd_geometry():
    geo = feasible_ir_set(prisoners_dilemma())
    assert {tuple(v) for v in geo.hull_vertices} == {(2.0, 2.0), (0.0, 3.0), (3.0, 0.0), (1.0, 1.0)}
    assert geo.contains((2, 2))
    assert not geo.individually_rational((1.5, 0.5)) and not geo.contains((1.5, 0.5))
    assert geo.contains((1, 1))
    assert not feasible_ir_set(prisoners_dilemma(), "strict").contains((1, 1))
    assert not geo.contains((3, 3)) and not geo.in_hull((3, 3))
    with pytest.raises(ValueError):
        feasible_ir_set(prisoners_dilemma(), "other")


def test_degenerate_hulls():
    flat = StageGame(np.array([[[0.0, 0.0], [1.0, 1.0]], [[2.0, 2.0], [3.0, 3.0]]]))
    geo = feasible_ir_set(flat)
    assert {tuple(v) for v in geo.hull_vertices} == {(0.0, 0.0), (3.0, 3.0)}
    assert geo.in_hull((1.5, 1.5)) and not geo.in_hull((1.5, 1.6))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_strict_set_inside_weak_set_and_vertices_in_hull(seed):
    rng = np.random.default_rng(seed)
    g = StageGame(rng.uniform(-2, 2, size=(2, 3, 2)))
    weak, strict = feasible_ir_set(g), feasible_ir_set(g, "strict")
    for v in weak.hull_vertices:
        assert in_hull(weak.hull_vertices, v)
    for x in rng.uniform(-2, 2, size=(10, 2)):
        assert not strict.contains(x) or weak.contains(x)


@pytest.mark.parametrize("delta,verdict", [(0.6, "strict"), (0.9, "strict"), (0.1, "not-equilibrium"), (0.3, "not-equilibrium")])
def test_trigger_threshold(delta, verdict):
    spec = pd_standard(delta, (1, 1)).spec
    trig = build_trigger_profile(spec, [(C, C)], punishment_length=1)
    assert trig.report.verdict == verdict


def test_trigger_matches_grim_and_defection_cycle(pd, pd_space):
    trig = build_trigger_profile(pd.spec, [(C, C)], space=pd_space)
    assert trig.indices == pd.indices(pd_space, "grim_trigger")
    all_d = build_trigger_profile(pd.spec.with_delta(0.2), [(D, D)])
    assert all_d.report.is_strict
    assert all_d.indices == pd.indices(pd_space, "all_d")


def test_trigger_needs_recall_and_perfect_monitoring():
    assert required_recall([(C, C), (D, D)], 1) == 1
    assert required_recall([(C, C), (C, C), (D, D)], 1) == 2
    with pytest.raises(CapacityError):
        build_trigger_profile(pd_standard(0.9, (1, 1)).spec, [(C, C), (C, C), (D, D)])
    with pytest.raises(ValueError):
        build_trigger_profile(pd_variant_noisy().spec, [(C, C)])


def test_strict_profiles_pay_feasible_and_rational_amounts():
    for scenario, names in [
        (pd_standard(0.9, (1, 1)), ["grim_trigger", "all_d"]),
        (pd_variant_noisy(0.01, 0.01, 0.01), ["reference", "all_d"]),
    ]:
        space = StrategySpace(scenario.spec)
        meta = build_meta_game(space)
        geo = feasible_ir_set(scenario.spec.stage)
        for name in names:
            payoff = per_period_values(scenario.spec, mixed_value(meta, scenario.profile(space, name)))
            assert in_hull(geo.hull_vertices, payoff, tol=1e-6)
            assert np.all(payoff >= geo.minmax_mixed - 1e-6)


def test_grim_normalized_payoff_is_member(pd, pd_space, pd_meta):
    payoff = per_period_values(pd.spec, mixed_value(pd_meta, pd.profile(pd_space, "grim_trigger")))
    assert np.allclose(payoff, [2.0, 2.0])
    assert feasible_ir_set(pd.spec.stage, "strict").contains(payoff)


def test_one_shot_basin_is_global(one_shot_pd):
    scenario, space, meta = one_shot_pd
    cfg = QReplicatorConfig(q=0.0, gamma=1.0, p=0.6, max_steps=2000)
    result = basin_experiment(meta, scenario.profile(space, "all_d"), 0.3, 100, cfg)
    assert result.converged_fraction == 1.0
    assert len(result.rows()) == 100


def test_basin_fraction_shrinks_with_radius(pd, pd_space, pd_meta):
    grim = pd.profile(pd_space, "grim_trigger")
    cfg = QReplicatorConfig(q=1.0, gamma=0.01, p=1.0, m=10, max_steps=2000)
    fractions = [basin_experiment(pd_meta, grim, r, 30, cfg).converged_fraction for r in (0.02, 0.1, 0.3, 0.6)]
    assert all(b <= a + 0.05 for a, b in zip(fractions, fractions[1:]))
    assert fractions[0] == 1.0


def test_basin_validation_and_warning(pd, pd_space, pd_meta):
    cfg = QReplicatorConfig(max_steps=5)
    with pytest.raises(ValueError):
        basin_experiment(pd_meta, pd.profile(pd_space, "grim_trigger"), 0.02, 0, cfg)
    with pytest.raises(ValueError):
        basin_experiment(pd_meta, pd.profile(pd_space, "grim_trigger"), 0.0, 3, cfg)
    with pytest.warns(UserWarning):
        basin_experiment(pd_meta, pd.profile(pd_space, "all_c"), 0.02, 2, cfg)


def test_start_at_target_stays(pd, pd_space, pd_meta):
    from recallgames.dynamics import run_exact

    grim = pd.profile(pd_space, "grim_trigger")
    traj = run_exact(pd_meta, grim, QReplicatorConfig(q=1.0, max_steps=50))
    assert distance_to_class(pd_space, traj.final, grim) == 0.0
