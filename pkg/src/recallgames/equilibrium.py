"""Equilibrium certification by exhaustive pure deviations, and the variational conditions.

A profile is strict when every pure deviation either loses by more than
``STRICT_TOL`` or leaves the deviator's play on the profile's path unchanged
(the deviated profile stays in the equivalence class).  The variational
check evaluates ``<v^q(pi*), pi - pi*> <= 0`` exactly over the polytope's
vertices and ``<v^q(pi), pi - pi*> < 0`` on sampled nearby profiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import q_gradient, q_gradient_batch
from .game import RepeatedGameSpec, StageGame, perfect_monitoring
from .strategies import (
    ClassTarget,
    StrategySpace,
    class_agreement_mask,
    pure_indices,
    pure_profile,
    same_class,
    sample_ball,
    validate_profile,
)
from .valuation import MetaGame, build_meta_game, deviation_values

STRICT_TOL = 1e-9
C1_TOL = 1e-9
C2_TOL = 1e-12
IN_CLASS_TOL = 1e-12


@dataclass(frozen=True)
class EquilibriumReport:
    is_equilibrium: bool
    is_strict: bool | None  # None when strictness was not examined
    worst_deviation: tuple[int, int, float]  # (player, pure strategy, gain) over all deviations
    class_note: str
    min_losing_margin: float | None = None  # smallest loss among out-of-class deviations
    worst_out_of_class: tuple[int, int, float] | None = None
    values: tuple[float, ...] = ()

    @property
    def verdict(self) -> str:
        if not self.is_equilibrium:
            return "not-equilibrium"
        return "strict" if self.is_strict else "equilibrium-non-strict"


def _gains(meta: MetaGame, profile) -> tuple[list[np.ndarray], np.ndarray]:
    gains = []
    values = []
    for i in range(meta.player_count):
        dev = deviation_values(meta, profile, i)
        base = float(profile[i] @ dev)
        values.append(base)
        gains.append(dev - base)
    return gains, np.array(values)


def _in_class_masks(space: StrategySpace, profile) -> list[np.ndarray]:
    idx = pure_indices(profile)
    masks = []
    for i in range(space.player_count):
        if idx is not None:
            masks.append(class_agreement_mask(space, idx, i))
            continue
        mask = np.zeros(space.strategy_counts[i], dtype=bool)
        for e in range(space.strategy_counts[i]):
            dev = list(profile)
            dev[i] = np.eye(space.strategy_counts[i])[e]
            mask[e] = same_class(space, dev, profile)
        masks.append(mask)
    return masks


def check_equilibrium(meta: MetaGame, profile: Sequence[np.ndarray]) -> EquilibriumReport:
    """Largest pure-deviation gain against ``profile``; equilibrium iff it is at most ``STRICT_TOL``."""
    profile = validate_profile(meta.space, profile)
    gains, values = _gains(meta, profile)
    player = int(np.argmax([g.max() for g in gains]))
    e = int(np.argmax(gains[player]))
    gain = float(gains[player][e])
    return EquilibriumReport(
        is_equilibrium=gain <= STRICT_TOL,
        is_strict=None,
        worst_deviation=(player, e, gain),
        class_note="not examined",
        values=tuple(values),
    )


def check_strict(meta: MetaGame, profile: Sequence[np.ndarray]) -> EquilibriumReport:
    """Equilibrium test plus strictness: every out-of-class pure deviation must lose by more than ``STRICT_TOL``."""
    space = meta.space
    profile = validate_profile(space, profile)
    gains, values = _gains(meta, profile)
    masks = _in_class_masks(space, profile)
    player = int(np.argmax([g.max() for g in gains]))
    e = int(np.argmax(gains[player]))
    gain = float(gains[player][e])
    is_eq = gain <= STRICT_TOL
    worst_out = None
    for i, (g, mask) in enumerate(zip(gains, masks)):
        outside = np.flatnonzero(~mask)
        if outside.size == 0:
            continue
        k = int(outside[np.argmax(g[outside])])
        if worst_out is None or g[k] > worst_out[2]:
            worst_out = (i, k, float(g[k]))
    margin = None if worst_out is None else -worst_out[2]
    strict = is_eq and (worst_out is None or worst_out[2] < -STRICT_TOL)
    note = "best deviation stays in the class" if masks[player][e] else "best deviation leaves the class"
    return EquilibriumReport(is_eq, strict, (player, e, gain), note, margin, worst_out, tuple(values))


@dataclass(frozen=True)
class VariationalReport:
    c1_holds: bool
    c1_value: float
    c1_vertex: tuple[int, int]  # (player, pure strategy) maximizing the linear form
    c2_holds: bool
    c2_worst: float
    epsilon_used: float
    samples: int
    counted: int  # samples outside the class that entered the test

    @property
    def holds(self) -> bool:
        return self.c1_holds and self.c2_holds


def _edge_probes(center: Sequence[np.ndarray], epsilon: float) -> list[np.ndarray]:
    """Profiles moving one player a step ``epsilon / 2`` toward each of its other pure strategies."""
    blocks = []
    for i, w in enumerate(center):
        moved = w[None, :] + 0.5 * epsilon * (np.eye(len(w)) - w[None, :])
        moved = moved[np.abs(moved - w[None, :]).max(axis=1) > 0]
        blocks.append([moved if j == i else np.broadcast_to(c, (len(moved), len(c))) for j, c in enumerate(center)])
    return [np.concatenate([blk[j] for blk in blocks]) for j in range(len(center))]


def _inner_products(meta, klass, center, batch, q):
    keep = klass.distances(batch) > IN_CLASS_TOL
    if not keep.any():
        return np.zeros(0)
    batch = [b[keep] for b in batch]
    grads = q_gradient_batch(meta, batch, q)
    return sum((g * (b - c[None, :])).sum(axis=1) for g, b, c in zip(grads, batch, center))


def _c2_scan(meta, klass, center, q, epsilon, count, rng, probes):
    """Largest inner product at probe and ball profiles outside the class; probes are tried first."""
    counted = 0
    worst = -np.inf
    if probes:
        inner = _inner_products(meta, klass, center, _edge_probes(center, epsilon), q)
        counted += inner.size
        if inner.size:
            worst = float(inner.max())
        if worst >= -C2_TOL:
            return False, worst, counted
    inner = _inner_products(meta, klass, center, sample_ball(meta.space, center, epsilon, rng, count), q)
    counted += inner.size
    if inner.size:
        worst = max(worst, float(inner.max()))
    return worst < -C2_TOL, worst, counted


def check_variational(
    meta: MetaGame,
    profile: Sequence[np.ndarray],
    q: float,
    epsilon: float = 0.02,
    sample_count: int = 1000,
    seed: int | np.random.SeedSequence = 0,
    ladder: Sequence[float] = (1.0, 0.5, 0.25),
    probes: bool = True,
) -> VariationalReport:
    """Evaluate the two variational conditions at ``profile``.

    The first is exact: the linear form is maximized at a vertex chosen
    player by player.  The second draws ``sample_count`` profiles from the
    radius-``epsilon`` ball (projected to the polytope), plus one-player
    probes toward every pure strategy, and discards those in the profile's
    class.  If it fails, smaller radii from ``ladder`` are tried in turn.
    """
    if epsilon <= 0 or sample_count < 1:
        raise ValueError("epsilon must be positive and sample_count at least 1")
    space = meta.space
    center = validate_profile(space, profile)
    grad = q_gradient(meta, center, q)
    contrib = [float(g.max() - g @ w) for g, w in zip(grad, center)]
    c1_value = float(sum(contrib))
    worst_player = int(np.argmax(contrib))
    c1_vertex = (worst_player, int(np.argmax(grad[worst_player])))
    rng = np.random.default_rng(seed)
    klass = ClassTarget(space, center)
    holds, worst, counted, used = False, np.inf, 0, epsilon
    for factor in ladder:
        used = epsilon * factor
        holds, worst, counted = _c2_scan(meta, klass, center, q, used, sample_count, rng, probes)
        if holds:
            break
    return VariationalReport(c1_value <= C1_TOL, c1_value, c1_vertex, holds, worst, used, sample_count, counted)


def random_small_spec(rng: np.random.Generator, recalls=(0, 1), deltas=(0.0, 0.5, 0.9)) -> RepeatedGameSpec:
    """Two players, two actions, rewards uniform in [-1, 1], perfect monitoring."""
    rewards = rng.uniform(-1.0, 1.0, size=(2, 2, 2))
    stage = StageGame(rewards)
    recall = int(rng.choice(recalls))
    return RepeatedGameSpec(stage, perfect_monitoring(stage), float(rng.choice(deltas)), (recall, recall))


@dataclass
class CrossValidationSummary:
    trials: int = 0
    profiles: int = 0
    strict: int = 0
    agreements: int = 0
    candidates: int = 0
    confirmed: list[dict] = field(default_factory=list)

    @property
    def confirmed_count(self) -> int:
        return len(self.confirmed)


def _serialize(spec: RepeatedGameSpec, indices, q, strict_report, var_report) -> dict:
    return {
        "rewards": spec.stage.rewards.tolist(),
        "delta": spec.delta,
        "recall": list(spec.recall),
        "profile": [int(k) for k in indices],
        "q": q,
        "strict": strict_report.verdict,
        "c1": [var_report.c1_holds, var_report.c1_value],
        "c2": [var_report.c2_holds, var_report.c2_worst, var_report.epsilon_used],
    }


def cross_validate_lemma(
    trials: int,
    seed: int,
    qs: Sequence[float] = (0.0, 1.0),
    sample_count: int = 1000,
    epsilon: float = 0.02,
    generator: Callable[[np.random.Generator], RepeatedGameSpec] = random_small_spec,
    max_profiles: int | None = None,
) -> CrossValidationSummary:
    """Compare strictness with the variational conditions on random specs and pure profiles.

    Disagreements are re-examined with ten times the samples and a longer
    radius ladder; those that persist are reported as confirmed, with a
    serialization of the game and profile.  ``max_profiles`` caps the pure
    profiles examined per trial (sampled without replacement).
    """
    seq = np.random.SeedSequence(seed)
    summary = CrossValidationSummary()
    for child in seq.spawn(trials):
        rng = np.random.default_rng(child)
        spec = generator(rng)
        space = StrategySpace(spec)
        meta = build_meta_game(space)
        counts = space.strategy_counts
        total = int(np.prod(counts))
        chosen = np.arange(total)
        if max_profiles is not None and total > max_profiles:
            chosen = np.sort(rng.choice(total, size=max_profiles, replace=False))
        summary.trials += 1
        for flat in chosen:
            indices = np.unravel_index(int(flat), counts)
            profile = pure_profile(space, indices)
            strict = check_strict(meta, profile)
            summary.profiles += 1
            summary.strict += bool(strict.is_strict)
            for q in qs:
                var = check_variational(meta, profile, q, epsilon, sample_count, rng.integers(2**63))
                if var.holds == bool(strict.is_strict):
                    summary.agreements += 1
                    continue
                summary.candidates += 1
                again = check_variational(
                    meta, profile, q, epsilon, 10 * sample_count, rng.integers(2**63),
                    ladder=(1.0, 0.5, 0.25, 0.125, 0.0625),
                )
                if again.holds == bool(strict.is_strict):
                    summary.agreements += 1
                else:
                    summary.confirmed.append(_serialize(spec, indices, q, strict, again))
    return summary
