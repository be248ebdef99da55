import numpy as np
import pytest

from recallgames.dynamics import check_on_simplex, q_gradient
from recallgames.estimator import (
    EpsilonGreedyConfig,
    diagnose_noise,
    expected_estimate,
    explored_weights,
    reinforce,
    run_stochastic,
    run_stochastic_batch,
    sample_gradient_estimates,
    score_from_episode,
)
from recallgames.scenarios import pd_standard, pd_variant_noisy
from recallgames.strategies import StrategySpace
from recallgames.valuation import Episode, build_meta_game, draw_noise, simulate_batch

C, D = 0, 1


@pytest.fixture(scope="module")
def noisy():
    spec = pd_variant_noisy(0.05, 0.05, 0.05, delta=0.5).spec
    space = StrategySpace(spec)
    return space, build_meta_game(space, epsilon=0.1)


def test_explored_weights():
    assert np.allclose(explored_weights(np.array([1.0, 0.0, 0.0, 0.0]), 0.2), [0.85, 0.05, 0.05, 0.05])


def test_single_period_pure_score(one_shot_pd):
    _, space, _ = one_shot_pd
    eps = 0.1
    w = np.array([0.3, 0.7])
    ep = Episode(np.array([[C, D]]), np.array([[0, 0]]), np.array([[0.0, 3.0]]), (0, 1), np.zeros((1, 2), bool))
    rec = score_from_episode(space, (w, w), ep, eps)
    lik = np.array([1 - eps + eps / 2, eps / 2])
    assert np.allclose(rec.scores[0], lik / (w @ lik))


def test_full_exploration_scores_are_flat(pd, pd_space):
    rng = np.random.default_rng(0)
    prof = tuple(rng.dirichlet(np.ones(k)) for k in pd_space.strategy_counts)
    noise = [draw_noise(rng, 0.9, 2) for _ in range(5)]
    res = simulate_batch(pd_space, prof, noise, 1.0, record=True)
    for ep in res.episodes:
        rec = score_from_episode(pd_space, prof, ep, 1.0)
        assert all(np.allclose(s, 1.0) for s in rec.scores)


def test_reinforce_hand_cases():
    w = np.full(4, 0.25)
    assert np.all(reinforce(0.0, np.array([1.0, 2.0, 3.0, 4.0]), w, 1.0) == 0)
    assert np.allclose(reinforce(1.0, np.eye(4)[2], w, 0.0), np.eye(4)[2] - 0.25)


@pytest.mark.parametrize("variant", ["pure_score", "paper_literal"])
def test_batch_scores_match_episode_recomputation(noisy, variant):
    space, _ = noisy
    rng = np.random.default_rng(3)
    prof = tuple(rng.dirichlet(np.ones(k)) for k in space.strategy_counts)
    noise = [draw_noise(rng, space.spec.delta, 2) for _ in range(20)]
    res = simulate_batch(space, prof, noise, 0.1, scores="both", record=True)
    for b, ep in enumerate(res.episodes):
        rec = score_from_episode(space, prof, ep, 0.1, variant)
        for i in range(2):
            if variant == "pure_score":
                w = prof[i]
                lik = np.exp(res.log_likelihoods[i][b] - res.log_likelihoods[i][b].max())
                expected = lik / (w @ lik)
            else:
                expected = res.literal_scores[i][b]
            assert np.allclose(rec.scores[i], expected, rtol=1e-10)


@pytest.mark.parametrize("q", [0.0, 1.0, 2.0])
def test_pure_score_is_unbiased(noisy, q):
    space, meta_eps = noisy
    rng = np.random.default_rng(int(q * 10) + 1)
    prof = tuple(rng.dirichlet(np.ones(k)) for k in space.strategy_counts)
    est = sample_gradient_estimates(space, prof, q, 0.1, 40_000, rng)
    exact = expected_estimate(meta_eps, prof, q)
    for e, x in zip(est, exact):
        se = e.std(axis=0, ddof=1) / np.sqrt(len(e))
        z = np.abs(e.mean(axis=0) - x) / np.maximum(se, 1e-300)
        # 64 coordinates in total: 4 standard errors keeps the family-wise false alarm rate under 0.5%
        assert z.max() < 4.0


def test_variance_ceiling(noisy):
    space, _ = noisy
    rng = np.random.default_rng(9)
    prof = tuple(rng.dirichlet(np.ones(k)) for k in space.strategy_counts)
    eps = 0.1
    est = sample_gradient_estimates(space, prof, 1.0, eps, 5000, rng)
    second = sum((e**2).sum(axis=1) for e in est).mean()
    bound = (np.abs(space.spec.stage.rewards).max() / (1 - space.spec.delta)) ** 2 * sum(space.strategy_counts) / eps**2
    assert np.isfinite(second) and second <= bound


def test_per_period_score_bias_is_reported(noisy, capsys):
    space, meta_eps = noisy
    rng = np.random.default_rng(4)
    prof = tuple(rng.dirichlet(np.ones(k)) for k in space.strategy_counts)
    est = sample_gradient_estimates(space, prof, 1.0, 0.1, 20_000, rng, variant="paper_literal")
    exact = expected_estimate(meta_eps, prof, 1.0)
    bias = np.linalg.norm(np.concatenate([e.mean(axis=0) - x for e, x in zip(est, exact)]))
    print(f"paper_literal bias norm at eps=0.1: {bias:.4f}")
    assert np.isfinite(bias)


def test_stochastic_runs_are_reproducible(pd, pd_space):
    cfg = EpsilonGreedyConfig(q=1.0, gamma=0.05, p=1.0, m=10, max_steps=200, epsilon=0.05)
    start = tuple(np.random.default_rng(0).dirichlet(np.ones(k)) for k in pd_space.strategy_counts)
    a = run_stochastic(pd_space, start, cfg, 42)
    b = run_stochastic(pd_space, start, cfg, 42)
    assert all(np.array_equal(x, y) for x, y in zip(a.final, b.final))
    for prof in a.profiles:
        check_on_simplex(prof)
    c = run_stochastic(pd_space, start, cfg, 43)
    assert not all(np.array_equal(x, y) for x, y in zip(a.final, c.final))


def test_batch_rows_do_not_interact(pd_space):
    cfg = EpsilonGreedyConfig(q=1.0, gamma=0.05, p=1.0, m=10, max_steps=100, epsilon=0.05)
    rng = np.random.default_rng(1)
    starts = [rng.dirichlet(np.ones(k), size=3) for k in pd_space.strategy_counts]
    seeds = [np.random.SeedSequence([7, s]) for s in range(3)]
    together = run_stochastic_batch(pd_space, starts, cfg, seeds)
    alone = run_stochastic_batch(pd_space, [w[1:2] for w in starts], cfg, seeds[1:2])
    for w, v in zip(together.final, alone.final):
        assert np.array_equal(w[1], v[0])


def test_zero_step_keeps_the_start(pd_space):
    cfg = EpsilonGreedyConfig(gamma=0.0, max_steps=20)
    start = tuple(np.random.default_rng(3).dirichlet(np.ones(k)) for k in pd_space.strategy_counts)
    traj = run_stochastic(pd_space, start, cfg, 0)
    assert all(np.allclose(a, b, rtol=0, atol=1e-15) for a, b in zip(traj.final, start))


def test_one_shot_pd_learns_defection(one_shot_pd):
    scenario, space, _ = one_shot_pd
    target = scenario.profile(space, "all_d")
    rng = np.random.default_rng(0)
    starts = [rng.dirichlet(np.ones(2), size=50) for _ in range(2)]
    cfg = EpsilonGreedyConfig(q=1.0, gamma=1.0, p=0.6, m=10, max_steps=5000, epsilon=0.05)
    run = run_stochastic_batch(space, starts, cfg, list(range(50)), target)
    assert (run.distances < 0.1).mean() >= 0.9


def test_config_validation():
    with pytest.raises(ValueError):
        EpsilonGreedyConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        EpsilonGreedyConfig(estimator="other")


def test_diagnostics_of_the_exact_gradient_are_zero(pd_space, pd_meta):
    def exact(profile, count, gen):
        return [np.tile(g, (count, 1)) for g in q_gradient(pd_meta, profile, 1.0)]

    rng = np.random.default_rng(0)
    profiles = [tuple(rng.dirichlet(np.ones(k)) for k in pd_space.strategy_counts) for _ in range(3)]
    diag = diagnose_noise(pd_meta, [0, 10, 100], profiles, 50, 1.0, 1.0, rng, estimator=exact)
    assert np.all(diag.bias_norm < 1e-12) and np.all(diag.second_moment < 1e-24)
    with pytest.raises(ValueError):
        diagnose_noise(pd_meta, [0], profiles[:1], 50, 1.0, 1.0, rng)


def test_diagnostics_track_pure_score_noise(noisy):
    space, meta_eps = noisy
    rng = np.random.default_rng(2)
    profiles = [tuple(rng.dirichlet(np.ones(k)) for k in space.strategy_counts) for _ in range(3)]
    diag = diagnose_noise(meta_eps, [1, 10, 100], profiles, 4000, 1.0, 1.0, rng, epsilon=0.1)
    assert np.all(diag.bias_norm < 4 * diag.bias_standard_error + 1e-12)
    assert np.all(diag.second_moment > 0)
