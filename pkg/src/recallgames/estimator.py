"""REINFORCE gradient estimates from sampled episodes and the epsilon-greedy stochastic process.

Execution semantics: each player draws one pure strategy from its current
weights at the start of an episode and plays it, except that in every
period the intended action is replaced by a uniform action with
probability ``epsilon``.  Under these semantics the ``pure_score`` estimate
``R_i * Lambda_i`` has expectation ``V_i^eps(e, pi_-i)``, the value of
committing to ``e`` in the trembling game, so its q-transform is unbiased
for the q-gradient of :func:`~recallgames.valuation.build_meta_game` with
the same ``epsilon``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    QReplicatorConfig,
    StepRecord,
    Trajectory,
    check_on_simplex,
    project_simplex_rows,
    q_transform,
)
from .strategies import ClassTarget, StrategySpace, validate_profile
from .valuation import (
    MC_CHUNK,
    Episode,
    MetaGame,
    deviation_values,
    draw_noise,
    simulate_batch,
)

VARIANTS = ("pure_score", "paper_literal")


@dataclass(frozen=True)
class EpsilonGreedyConfig(QReplicatorConfig):
    epsilon: float = 0.05
    estimator: str = "pure_score"

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.estimator not in VARIANTS:
            raise ValueError(f"unknown estimator {self.estimator!r}; expected one of {VARIANTS}")


@dataclass(frozen=True)
class ScoreRecord:
    rewards: np.ndarray  # (N,) realized totals
    scores: tuple[np.ndarray, ...]  # per player (K_i,)


def explored_weights(weights: np.ndarray, epsilon: float) -> np.ndarray:
    """``(1 - epsilon) pi + epsilon / K``, the weights used inside the q-transform."""
    w = np.asarray(weights, dtype=float)
    return (1.0 - epsilon) * w + epsilon / w.shape[-1]


def pure_scores_from_loglik(weights: np.ndarray, loglik: np.ndarray) -> np.ndarray:
    """``L(e) / sum_e' pi_e' L(e')`` computed stably from log-likelihood rows."""
    shift = loglik.max(axis=-1, keepdims=True)
    lik = np.exp(loglik - shift)
    mass = (weights * lik).sum(axis=-1, keepdims=True)
    if np.any(mass <= 0):
        raise RuntimeError("realized action sequence has zero likelihood under the sampled mixture")
    return lik / mass


def score_from_episode(
    space: StrategySpace,
    profile: Sequence[np.ndarray],
    episode: Episode,
    epsilon: float,
    variant: str = "pure_score",
) -> ScoreRecord:
    """Per-player score vectors for an episode played under epsilon-greedy execution of ``profile``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown estimator {variant!r}")
    profile = validate_profile(space, profile)
    conds = space.conditionals(profile)
    scores = []
    for i, hs in enumerate(space.histories):
        k = space.action_counts[i]
        table = space.tables[i]
        h = 0
        loglik = np.zeros(space.strategy_counts[i])
        literal = np.zeros(space.strategy_counts[i])
        for t in range(episode.length):
            a = int(episode.actions[t, i])
            match = table[:, h] == a
            with np.errstate(divide="ignore"):
                loglik += np.log(np.where(match, 1.0 - epsilon + epsilon / k, epsilon / k))
            p_hat = (1.0 - epsilon) * conds[i][h, a] + epsilon / k
            literal += (1.0 - epsilon) * match / p_hat
            h = int(hs.successor[h, hs.pair_index[a, episode.signals[t, i]]])
        if variant == "pure_score":
            scores.append(pure_scores_from_loglik(profile[i], loglik))
        else:
            scores.append(literal)
    return ScoreRecord(episode.total_rewards, tuple(scores))


def reinforce(reward: float | np.ndarray, score: np.ndarray, weights: np.ndarray, q: float) -> np.ndarray:
    """q-transformed REINFORCE estimate ``q_transform(weights, reward * score, q)``; broadcasts over rows."""
    reward = np.asarray(reward, dtype=float)
    w_hat = (reward[..., None] if reward.ndim else reward) * np.asarray(score, dtype=float)
    return q_transform(weights, w_hat, q)


def _batch_scores(result, batch_weights, variant):
    if variant == "pure_score":
        return [pure_scores_from_loglik(w, ll) for w, ll in zip(batch_weights, result.log_likelihoods)]
    return result.literal_scores


def sample_gradient_estimates(
    space: StrategySpace,
    profile: Sequence[np.ndarray],
    q: float,
    epsilon: float,
    count: int,
    rng: np.random.Generator,
    variant: str = "pure_score",
) -> list[np.ndarray]:
    """``count`` independent REINFORCE q-gradient estimates at a fixed profile; per player ``(count, K_i)``."""
    profile = validate_profile(space, profile)
    n = space.player_count
    weights_hat = [explored_weights(w, epsilon) for w in profile]
    out = [[] for _ in range(n)]
    for start in range(0, count, MC_CHUNK):
        size = min(MC_CHUNK, count - start)
        noise = [draw_noise(rng, space.spec.delta, n) for _ in range(size)]
        res = simulate_batch(space, profile, noise, epsilon, scores=variant)
        batch_w = [np.broadcast_to(w, (size, len(w))) for w in profile]
        scores = _batch_scores(res, batch_w, variant)
        for i in range(n):
            out[i].append(reinforce(res.totals[:, i], scores[i], weights_hat[i], q))
    return [np.concatenate(parts) for parts in out]


def expected_estimate(meta_eps: MetaGame, profile: Sequence[np.ndarray], q: float) -> list[np.ndarray]:
    """Exact mean of the ``pure_score`` estimate, given the trembling meta-game at the same epsilon."""
    eps = meta_eps.epsilon
    return [
        q_transform(explored_weights(w, eps), deviation_values(meta_eps, profile, i), q)
        for i, w in enumerate(profile)
    ]


@dataclass
class StochasticBatchRun:
    final: list[np.ndarray]
    distances: np.ndarray | None
    steps: np.ndarray
    trajectory: Trajectory | None = None


def run_stochastic_batch(
    space: StrategySpace,
    starts: Sequence[np.ndarray],
    cfg: EpsilonGreedyConfig,
    seeds: Sequence[int | np.random.SeedSequence],
    target: Sequence[np.ndarray] | None = None,
    record: bool = False,
) -> StochasticBatchRun:
    """Lock-step epsilon-greedy q-replicator runs, one generator per row.

    Row ``b`` draws all of its randomness from ``default_rng(seeds[b])`` in a
    fixed order, so its trajectory is identical however many rows run
    alongside it.
    """
    klass = ClassTarget(space, target) if target is not None else None
    batch = [np.array(np.atleast_2d(w), dtype=float, copy=True) for w in starts]
    B = batch[0].shape[0]
    if len(seeds) != B:
        raise ValueError(f"{len(seeds)} seeds for {B} starting profiles")
    check_on_simplex(batch)
    rngs = [np.random.default_rng(s) for s in seeds]
    n_players = space.player_count
    active = np.ones(B, dtype=bool)
    steps = np.zeros(B, dtype=np.int64)
    traj = Trajectory() if record else None
    for n in range(cfg.max_steps + 1):
        dist = klass.gaps(batch) if klass is not None else None
        if klass is not None and cfg.stop_tolerance > 0:
            active &= dist >= cfg.stop_tolerance
        done = n == cfg.max_steps or not active.any()
        if done and not record:
            break
        rows = np.flatnonzero(active)
        sizes = cfg.step_sizes(n, n_players)
        if not done:
            noise = [draw_noise(rngs[b], space.spec.delta, n_players) for b in rows]
            current = [w[rows] for w in batch]
            res = simulate_batch(space, current, noise, cfg.epsilon, scores=cfg.estimator)
            scores = _batch_scores(res, current, cfg.estimator)
            grads = [
                reinforce(res.totals[:, i], scores[i], explored_weights(current[i], cfg.epsilon), cfg.q)
                for i in range(n_players)
            ]
        if record and (n % cfg.record_every == 0 or done):
            gnorm = float(np.sqrt(sum((g[0] ** 2).sum() for g in grads))) if not done and len(rows) else 0.0
            traj.profiles.append(tuple(w[0].copy() for w in batch))
            traj.records.append(
                StepRecord(n, tuple(sizes), gnorm, None if dist is None else float(dist[0]))
            )
        if done:
            break
        for i in range(n_players):
            batch[i][rows] = project_simplex_rows(current[i] + sizes[i] * grads[i])
        steps[rows] += 1
    final_dist = klass.distances(batch) if klass is not None else None
    if traj is not None:
        traj.steps = int(steps[0])
        if final_dist is not None:
            last = traj.records[-1]
            traj.records[-1] = StepRecord(last.n, last.step_sizes, last.gradient_norm, float(final_dist[0]))
    return StochasticBatchRun(batch, final_dist, steps, traj)


def run_stochastic(
    space: StrategySpace,
    start: Sequence[np.ndarray],
    cfg: EpsilonGreedyConfig,
    seed: int | np.random.SeedSequence,
    target: Sequence[np.ndarray] | None = None,
) -> Trajectory:
    """Single epsilon-greedy trajectory with every recorded iterate."""
    start = validate_profile(space, start)
    run = run_stochastic_batch(space, [w[None, :] for w in start], cfg, [seed], target, record=True)
    return run.trajectory


@dataclass(frozen=True)
class NoiseDiagnostics:
    steps: np.ndarray
    second_moment: np.ndarray  # E||U||^2 per step
    bias_norm: np.ndarray  # ||mean estimate - reference|| per step
    bias_standard_error: np.ndarray
    ell_sigma: float
    ell_b: float
    p: float
    variant: str

    @property
    def bias_condition(self) -> bool:
        return self.p + self.ell_b > 1.0

    @property
    def noise_condition(self) -> bool:
        return self.p - self.ell_sigma > 0.5


Estimator = Callable[[Sequence[np.ndarray], int, np.random.Generator], list[np.ndarray]]


def _fit_exponent(steps: np.ndarray, values: np.ndarray, empty: float) -> float:
    keep = values > 1e-15
    if keep.sum() < 2:
        return empty
    x = np.log(steps[keep] + 1.0)
    y = np.log(values[keep])
    if np.ptp(x) == 0:
        return empty
    return float(np.polyfit(x, y, 1)[0])


def diagnose_noise(
    meta: MetaGame,
    steps: Sequence[int],
    profiles: Sequence[Sequence[np.ndarray]],
    samples: int,
    q: float,
    p: float,
    rng: np.random.Generator,
    epsilon: float = 0.05,
    variant: str = "pure_score",
    estimator: Estimator | None = None,
) -> NoiseDiagnostics:
    """Empirical noise and bias of a gradient estimator along a sequence of profiles.

    The reference gradient at each profile is the q-transform of ``meta``'s
    deviation values, weighted by ``(1 - eps) pi + eps / K`` when ``meta`` is a
    trembling meta-game and by ``pi`` otherwise.  Pass the trembling
    meta-game to test the estimator against its own expectation, or the
    plain one to measure the bias of the epsilon-greedy scheme itself.
    Exponents are least-squares slopes against ``log(n + 1)``:
    ``sigma_n ~ n^ell_sigma`` and ``bias_n ~ n^-ell_b``.
    """
    if len(profiles) < 2 or len(profiles) != len(steps):
        raise ValueError("need at least two steps with one profile each")
    if samples < 30:
        raise ValueError("need at least 30 samples per step")
    space = meta.space
    if estimator is None:
        def estimator(profile, count, gen):
            return sample_gradient_estimates(space, profile, q, epsilon, count, gen, variant)
    second, bias, bias_se = [], [], []
    for profile in profiles:
        profile = validate_profile(space, profile)
        est = estimator(profile, samples, rng)
        ref_w = [explored_weights(w, meta.epsilon) if meta.epsilon > 0 else w for w in profile]
        ref = [q_transform(ref_w[i], deviation_values(meta, profile, i), q) for i in range(len(profile))]
        flat = np.concatenate([np.asarray(e, dtype=float) for e in est], axis=1)
        mean = flat.mean(axis=0)
        centered = flat - mean
        second.append(float((centered**2).sum(axis=1).mean()))
        bias.append(float(np.linalg.norm(mean - np.concatenate(ref))))
        bias_se.append(float(np.sqrt(second[-1] / samples)))
    steps = np.asarray(steps, dtype=float)
    second = np.array(second)
    bias = np.array(bias)
    ell_sigma = _fit_exponent(steps, np.sqrt(second), -np.inf)
    ell_b = -_fit_exponent(steps, bias, -np.inf)
    return NoiseDiagnostics(steps, second, bias, np.array(bias_se), ell_sigma, ell_b, p, variant)
