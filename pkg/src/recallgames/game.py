"""Stage games, monitoring structures and repeated-game specifications.

Action profiles are indexed in mixed radix over ``action_counts`` with the
last player varying fastest (C order); joint signal profiles use the same
convention over ``signal_counts``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

KERNEL_TOL = 1e-12
RENORMALIZE_TOL = 1e-9
SIMPLEX_TOL = 1e-9
DEFAULT_MAX_RECALL = 6


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StageGame:
    """A finite normal-form game.

    ``rewards`` has shape ``(*action_counts, player_count)``.
    """

    rewards: np.ndarray
    action_names: tuple[tuple[str, ...], ...] = ()
    player_names: tuple[str, ...] = ()

    def __post_init__(self):
        rewards = np.asarray(self.rewards, dtype=float)
        if rewards.ndim < 2:
            raise ValueError("rewards must have shape (*action_counts, player_count)")
        n = rewards.shape[-1]
        if rewards.ndim - 1 != n:
            raise ValueError(
                f"rewards tensor has {rewards.ndim - 1} action axes but {n} payoff entries per profile"
            )
        if not np.all(np.isfinite(rewards)):
            raise ValueError("all payoffs must be finite")
        object.__setattr__(self, "rewards", _frozen(rewards))
        counts = rewards.shape[:-1]
        if not self.action_names:
            names = tuple(tuple(str(a) for a in range(k)) for k in counts)
            object.__setattr__(self, "action_names", names)
        elif tuple(len(a) for a in self.action_names) != counts:
            raise ValueError("action_names do not match the reward tensor")
        else:
            object.__setattr__(self, "action_names", tuple(tuple(a) for a in self.action_names))
        if not self.player_names:
            object.__setattr__(self, "player_names", tuple(f"p{i}" for i in range(n)))

    @property
    def player_count(self) -> int:
        return self.rewards.shape[-1]

    @property
    def action_counts(self) -> tuple[int, ...]:
        return self.rewards.shape[:-1]

    @property
    def profile_count(self) -> int:
        return int(np.prod(self.action_counts))

    @property
    def reward_table(self) -> np.ndarray:
        """Rewards as a ``(profile_count, player_count)`` matrix."""
        return self.rewards.reshape(self.profile_count, self.player_count)

    def profile_index(self, profile: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(profile), self.action_counts))

    def profile_tuple(self, index: int) -> tuple[int, ...]:
        return tuple(int(a) for a in np.unravel_index(index, self.action_counts))

    def profiles(self):
        return itertools.product(*(range(k) for k in self.action_counts))

    def profile_label(self, index: int) -> str:
        a = self.profile_tuple(index)
        return ",".join(self.action_names[i][ai] for i, ai in enumerate(a))


def check_distribution(p: np.ndarray, size: int, what: str = "distribution") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (size,):
        raise ValueError(f"{what} has shape {p.shape}, expected ({size},)")
    if np.any(p < -SIMPLEX_TOL) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"{what} is not on the simplex (sum={p.sum():.12g})")
    return p


def one_shot_utility(game: StageGame, profile: Sequence[np.ndarray]) -> np.ndarray:
    """Expected stage rewards when players draw independently from ``profile``."""
    if len(profile) != game.player_count:
        raise ValueError(f"expected {game.player_count} distributions, got {len(profile)}")
    t = game.rewards
    # contract the last action axis first so the remaining axis numbers stay valid
    for i in reversed(range(game.player_count)):
        p = check_distribution(profile[i], game.action_counts[i], f"player {i} distribution")
        t = np.tensordot(t, p, axes=([i], [0]))
    return t


@dataclass(frozen=True, eq=False)
class MonitoringStructure:
    """Signal kernel mapping action profiles to distributions over joint signals.

    ``kernel`` has shape ``(profile_count, joint_signal_count)``.  Rows within
    ``RENORMALIZE_TOL`` of summing to one are renormalized, others rejected.
    """

    action_counts: tuple[int, ...]
    signal_counts: tuple[int, ...]
    kernel: np.ndarray
    signal_names: tuple[tuple[str, ...], ...] = ()
    support: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "action_counts", tuple(int(k) for k in self.action_counts))
        object.__setattr__(self, "signal_counts", tuple(int(k) for k in self.signal_counts))
        if len(self.action_counts) != len(self.signal_counts):
            raise ValueError("one signal set per player is required")
        if any(k <= 0 for k in self.signal_counts):
            raise ValueError("signal counts must be positive")
        kernel = np.asarray(self.kernel, dtype=float)
        shape = (int(np.prod(self.action_counts)), int(np.prod(self.signal_counts)))
        if kernel.shape != shape:
            raise ValueError(f"kernel has shape {kernel.shape}, expected {shape}")
        if np.any(kernel < 0) or not np.all(np.isfinite(kernel)):
            raise ValueError("kernel probabilities must be finite and nonnegative")
        sums = kernel.sum(axis=1)
        bad = np.abs(sums - 1.0) > RENORMALIZE_TOL
        if np.any(bad):
            row = int(np.flatnonzero(bad)[0])
            raise ValueError(f"kernel row {row} sums to {sums[row]:.12g}, not 1")
        kernel = kernel / sums[:, None]
        assert np.all(np.abs(kernel.sum(axis=1) - 1.0) <= KERNEL_TOL)
        object.__setattr__(self, "kernel", _frozen(kernel))
        object.__setattr__(
            self, "support", tuple(np.flatnonzero(row > 0) for row in kernel)
        )
        if not self.signal_names:
            names = tuple(tuple(str(z) for z in range(k)) for k in self.signal_counts)
            object.__setattr__(self, "signal_names", names)
        else:
            object.__setattr__(self, "signal_names", tuple(tuple(z) for z in self.signal_names))
            if tuple(len(z) for z in self.signal_names) != self.signal_counts:
                raise ValueError("signal_names do not match signal_counts")

    @property
    def player_count(self) -> int:
        return len(self.signal_counts)

    def signal_tuple(self, index: int) -> tuple[int, ...]:
        return tuple(int(z) for z in np.unravel_index(index, self.signal_counts))

    def signal_index(self, signals: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(signals), self.signal_counts))

    def support_pairs(self):
        """Yield ``(profile_index, signal_index, probability)`` over the kernel support."""
        for a, zs in enumerate(self.support):
            for z in zs:
                yield a, int(z), float(self.kernel[a, z])

    def observation_map(self, player: int) -> dict[tuple[int, int], set[int]]:
        """Map each observed (own action, own signal) pair to the profiles consistent with it."""
        out: dict[tuple[int, int], set[int]] = {}
        for a, z, _ in self.support_pairs():
            ai = int(np.unravel_index(a, self.action_counts)[player])
            zi = self.signal_tuple(z)[player]
            out.setdefault((ai, zi), set()).add(a)
        return out

    @property
    def is_perfect(self) -> bool:
        # own action together with own signal pins down the whole profile on support
        return all(
            len(profiles) == 1
            for i in range(self.player_count)
            for profiles in self.observation_map(i).values()
        )

    @property
    def is_public(self) -> bool:
        for _, z, _ in self.support_pairs():
            zs = self.signal_tuple(z)
            if any(zi != zs[0] for zi in zs[1:]):
                return False
        return True


def perfect_monitoring(game: StageGame) -> MonitoringStructure:
    """Each player's signal is the realized action profile."""
    n, count = game.player_count, game.profile_count
    signal_counts = (count,) * n
    kernel = np.zeros((count, count**n))
    for a in range(count):
        kernel[a, np.ravel_multi_index((a,) * n, signal_counts)] = 1.0
    labels = tuple(game.profile_label(a) for a in range(count))
    return MonitoringStructure(game.action_counts, signal_counts, kernel, (labels,) * n)


@dataclass(frozen=True, eq=False)
class RepeatedGameSpec:
    """Stage game, monitoring, continuation probability and per-player recall."""

    stage: StageGame
    monitoring: MonitoringStructure
    delta: float
    recall: tuple[int, ...]
    max_recall: int = DEFAULT_MAX_RECALL

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        recall = tuple(int(r) for r in self.recall)
        object.__setattr__(self, "recall", recall)
        if len(recall) != self.stage.player_count:
            raise ValueError("one recall length per player is required")
        if any(r < 0 for r in recall):
            raise ValueError("recall lengths must be nonnegative")
        if any(r > self.max_recall for r in recall):
            raise ValueError(f"recall {recall} exceeds the configured cap {self.max_recall}")
        if self.monitoring.action_counts != self.stage.action_counts:
            raise ValueError("monitoring structure was built for a different action space")

    @property
    def player_count(self) -> int:
        return self.stage.player_count

    def with_delta(self, delta: float) -> "RepeatedGameSpec":
        return RepeatedGameSpec(self.stage, self.monitoring, delta, self.recall, self.max_recall)

    def with_recall(self, recall: Sequence[int]) -> "RepeatedGameSpec":
        return RepeatedGameSpec(self.stage, self.monitoring, self.delta, tuple(recall), self.max_recall)


class DeducibilityViolation(NamedTuple):
    player: int
    profile: int
    other_profile: int
    own_action: int
    signal: int


def validate_reward_deducibility(spec: RepeatedGameSpec) -> list[DeducibilityViolation]:
    """List cases where a player's action and signal do not determine their reward.

    Diagnostic only: learners are always handed realized rewards.
    """
    rewards = spec.stage.reward_table
    violations = []
    for i in range(spec.player_count):
        for (ai, zi), profiles in sorted(spec.monitoring.observation_map(i).items()):
            ordered = sorted(profiles)
            for x, a in enumerate(ordered):
                for b in ordered[x + 1:]:
                    if rewards[a, i] != rewards[b, i]:
                        violations.append(DeducibilityViolation(i, a, b, ai, zi))
    return violations
