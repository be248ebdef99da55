"""Finite-recall private histories, pure strategies and mixed strategy profiles.

A mixed strategy of player ``i`` is a weight vector over that player's
enumerated pure strategies; a profile is a tuple of such vectors.  Pure
strategies are stored as rows of an integer table ``tables[i]`` of shape
``(strategy_count, history_count)`` in lexicographic order, with the empty
history as the most significant digit.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .game import SIMPLEX_TOL, RepeatedGameSpec

DEFAULT_STRATEGY_CAP = 4096
CLASS_TOL = 1e-9

Profile = tuple[np.ndarray, ...]


class CapacityError(ValueError):
    """Raised when an enumeration would exceed its configured cap."""

    def __init__(self, message: str, required: int | None = None):
        super().__init__(message)
        self.required = required


@dataclass(frozen=True, eq=False)
class HistorySpace:
    """Private histories of one player: sequences of length 0..recall of (action, signal) pairs."""

    player: int
    recall: int
    pairs: np.ndarray  # (pair_count, 2) rows of (own action, own signal)
    pair_index: np.ndarray  # (action_count, signal_count) -> pair id or -1
    histories: tuple[tuple[int, ...], ...]
    successor: np.ndarray  # (history_count, pair_count) -> history id
    index: dict

    @classmethod
    def build(cls, spec: RepeatedGameSpec, player: int, prune: bool = True) -> "HistorySpace":
        mon = spec.monitoring
        n_actions = spec.stage.action_counts[player]
        n_signals = mon.signal_counts[player]
        if prune:
            seen = sorted(mon.observation_map(player))
        else:
            seen = list(itertools.product(range(n_actions), range(n_signals)))
        pairs = np.array(seen, dtype=np.int64).reshape(-1, 2)
        pair_index = -np.ones((n_actions, n_signals), dtype=np.int64)
        for k, (a, z) in enumerate(seen):
            pair_index[a, z] = k
        recall = spec.recall[player]
        histories = tuple(
            h for length in range(recall + 1) for h in itertools.product(range(len(seen)), repeat=length)
        )
        index = {h: k for k, h in enumerate(histories)}
        successor = np.zeros((len(histories), len(seen)), dtype=np.int64)
        for k, h in enumerate(histories):
            for p in range(len(seen)):
                nxt = (h + (p,))[len(h) + 1 - recall:] if recall > 0 else ()
                successor[k, p] = index[nxt]
        return cls(player, recall, pairs, pair_index, histories, successor, index)

    @property
    def count(self) -> int:
        return len(self.histories)

    def decode(self, history_id: int) -> tuple[tuple[int, int], ...]:
        return tuple((int(self.pairs[p, 0]), int(self.pairs[p, 1])) for p in self.histories[history_id])

    def encode(self, pairs: Sequence[tuple[int, int]]) -> int:
        ids = []
        for a, z in pairs:
            p = int(self.pair_index[a, z])
            if p < 0:
                raise KeyError(f"pair ({a}, {z}) is not part of player {self.player}'s history space")
            ids.append(p)
        return self.index[tuple(ids)]


@dataclass(frozen=True)
class PureStrategy:
    player: int
    index: int
    table: tuple[int, ...]


class StrategySpace:
    """Enumerated histories and pure strategies of every player of a repeated game."""

    def __init__(self, spec: RepeatedGameSpec, prune: bool = True, cap: int = DEFAULT_STRATEGY_CAP):
        self.spec = spec
        self.prune = prune
        self.cap = cap
        self.histories = tuple(HistorySpace.build(spec, i, prune) for i in range(spec.player_count))
        counts = []
        for i, hs in enumerate(self.histories):
            n_actions = spec.stage.action_counts[i]
            required = n_actions**hs.count
            if required > cap:
                raise CapacityError(
                    f"player {i} has {required} pure strategies "
                    f"({n_actions}^{hs.count} histories), cap is {cap}",
                    required,
                )
            counts.append(required)
        self.strategy_counts = tuple(counts)
        tables = []
        onehots = []
        for i, hs in enumerate(self.histories):
            n_actions = spec.stage.action_counts[i]
            digits = np.unravel_index(np.arange(counts[i]), (n_actions,) * hs.count)
            table = np.stack(digits, axis=1).astype(np.int64)
            table.setflags(write=False)
            tables.append(table)
            onehot = np.zeros((counts[i], hs.count, n_actions))
            np.put_along_axis(onehot, table[:, :, None], 1.0, axis=2)
            onehots.append(onehot.reshape(counts[i], -1))
        self.tables = tuple(tables)
        self._onehots = tuple(onehots)

    @property
    def player_count(self) -> int:
        return self.spec.player_count

    @property
    def action_counts(self) -> tuple[int, ...]:
        return self.spec.stage.action_counts

    def pure_strategies(self, player: int) -> list[PureStrategy]:
        return [
            PureStrategy(player, k, tuple(int(a) for a in row))
            for k, row in enumerate(self.tables[player])
        ]

    def strategy_index(self, player: int, table: Sequence[int]) -> int:
        shape = (self.action_counts[player],) * self.histories[player].count
        return int(np.ravel_multi_index(tuple(int(a) for a in table), shape))

    def strategy_from_rule(self, player: int, rule: Callable[[tuple[tuple[int, int], ...]], int]) -> int:
        """Index of the pure strategy playing ``rule(history)`` after every private history."""
        hs = self.histories[player]
        return self.strategy_index(player, [rule(hs.decode(h)) for h in range(hs.count)])

    def conditionals(self, profile: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Per-player ``(history_count, action_count)`` action distributions induced by the mixture."""
        return [
            (np.asarray(w) @ self._onehots[i]).reshape(self.histories[i].count, self.action_counts[i])
            for i, w in enumerate(profile)
        ]


def enumerate_pure_strategies(
    spec: RepeatedGameSpec, player: int, prune: bool = True, cap: int = DEFAULT_STRATEGY_CAP
) -> list[PureStrategy]:
    return StrategySpace(spec, prune, cap).pure_strategies(player)


def validate_profile(space: StrategySpace, profile: Sequence[np.ndarray]) -> Profile:
    if len(profile) != space.player_count:
        raise ValueError(f"profile has {len(profile)} players, expected {space.player_count}")
    out = []
    for i, w in enumerate(profile):
        w = np.asarray(w, dtype=float)
        if w.shape != (space.strategy_counts[i],):
            raise ValueError(f"player {i} weights have shape {w.shape}, expected ({space.strategy_counts[i]},)")
        if np.any(w < -SIMPLEX_TOL) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"player {i} weights are not on the simplex")
        out.append(w)
    return tuple(out)


def pure_profile(space: StrategySpace, indices: Sequence[int]) -> Profile:
    out = []
    for i, k in enumerate(indices):
        w = np.zeros(space.strategy_counts[i])
        w[k] = 1.0
        out.append(w)
    return tuple(out)


def uniform_profile(space: StrategySpace) -> Profile:
    return tuple(np.full(k, 1.0 / k) for k in space.strategy_counts)


def pure_indices(profile: Sequence[np.ndarray]) -> tuple[int, ...] | None:
    """Strategy indices if every player's weights are a point mass, else None."""
    out = []
    for w in profile:
        k = int(np.argmax(w))
        if abs(w[k] - 1.0) > SIMPLEX_TOL:
            return None
        out.append(k)
    return tuple(out)


def _closure(space: StrategySpace, supports: Sequence[np.ndarray]) -> list[set[int]]:
    """Forward closure over joint recall states; ``supports[i][h]`` lists playable actions."""
    spec = space.spec
    mon = spec.monitoring
    n = spec.player_count
    start = tuple(0 for _ in range(n))
    seen = {start}
    queue = deque([start])
    reach = [set() for _ in range(n)]
    while queue:
        state = queue.popleft()
        for i in range(n):
            reach[i].add(state[i])
        if spec.delta == 0.0:
            continue
        for actions in itertools.product(*(supports[i][state[i]] for i in range(n))):
            a = spec.stage.profile_index(actions)
            for z in mon.support[a]:
                zs = mon.signal_tuple(int(z))
                nxt = tuple(
                    int(space.histories[i].successor[state[i], space.histories[i].pair_index[actions[i], zs[i]]])
                    for i in range(n)
                )
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
    return reach


def reachable_histories(space: StrategySpace, profile: Sequence[np.ndarray]) -> list[frozenset[int]]:
    """Private histories each player observes with positive probability under ``profile``.

    Any action with positive induced probability at a reached history is
    expanded, along with every signal in the kernel support.
    """
    conds = space.conditionals(profile)
    supports = [[np.flatnonzero(row > 0) for row in c] for c in conds]
    return [frozenset(r) for r in _closure(space, supports)]


def pure_reachable_histories(space: StrategySpace, indices: Sequence[int]) -> list[frozenset[int]]:
    supports = [[(int(a),) for a in space.tables[i][k]] for i, k in enumerate(indices)]
    return [frozenset(r) for r in _closure(space, supports)]


def same_class(space: StrategySpace, first: Sequence[np.ndarray], second: Sequence[np.ndarray]) -> bool:
    """Whether two profiles share reachability and on-path conditional play."""
    reach_a = reachable_histories(space, first)
    reach_b = reachable_histories(space, second)
    if reach_a != reach_b:
        return False
    ca, cb = space.conditionals(first), space.conditionals(second)
    for i, hs in enumerate(reach_a):
        rows = sorted(hs)
        if rows and np.max(np.abs(ca[i][rows] - cb[i][rows])) > CLASS_TOL:
            return False
    return True


class ClassTarget:
    """Precomputed reachability and conditionals of a target profile for repeated distance queries."""

    def __init__(self, space: StrategySpace, target: Sequence[np.ndarray]):
        self.space = space
        self.target = tuple(np.asarray(w, dtype=float) for w in target)
        idx = pure_indices(self.target)
        self.pure = idx
        if idx is not None:
            self.reach = pure_reachable_histories(space, idx)
        else:
            self.reach = reachable_histories(space, self.target)
        self.rows = [np.array(sorted(r), dtype=np.int64) for r in self.reach]
        conds = space.conditionals(self.target)
        self.target_conditionals = [c[rows] for c, rows in zip(conds, self.rows)]
        self._flat = []
        for i, rows in enumerate(self.rows):
            k, hc, na = space.strategy_counts[i], space.histories[i].count, space.action_counts[i]
            self._flat.append(np.ascontiguousarray(space._onehots[i].reshape(k, hc, na)[:, rows, :].reshape(k, -1)))

    def gaps(self, batch: Sequence[np.ndarray]) -> np.ndarray:
        """Largest on-path total-variation gap for each row of a ``(B, K_i)`` batch."""
        worst = None
        for i, w in enumerate(batch):
            w = np.atleast_2d(np.asarray(w, dtype=float))
            cond = (w @ self._flat[i]).reshape(len(w), len(self.rows[i]), -1)
            tv = 0.5 * np.abs(cond - self.target_conditionals[i][None]).sum(axis=2).max(axis=1)
            worst = tv if worst is None else np.maximum(worst, tv)
        return worst

    def distance(self, profile: Sequence[np.ndarray]) -> float:
        worst = float(self.gaps([np.asarray(w)[None, :] for w in profile])[0])
        if worst < 1.0 - 1e-12:
            # every target action keeps positive weight, so the target's path stays reachable
            return worst
        reach = reachable_histories(self.space, profile)
        missing = sum(len(self.reach[i] - reach[i]) for i in range(self.space.player_count))
        return worst + missing

    def distances(self, batch: Sequence[np.ndarray]) -> np.ndarray:
        out = self.gaps(batch)
        for b in np.flatnonzero(out >= 1.0 - 1e-12):
            out[b] = self.distance([np.asarray(w)[b] for w in batch])
        return out


def distance_to_class(space: StrategySpace, profile: Sequence[np.ndarray], target: Sequence[np.ndarray]) -> float:
    """Largest total-variation gap between induced conditionals on the target's reachable histories.

    One is added for every target-reachable history that ``profile`` never
    reaches.  Histories reached only by ``profile`` are off the target's path
    and are ignored; they cannot arise once the gap is zero.
    """
    return ClassTarget(space, target).distance(profile)


def class_agreement_mask(space: StrategySpace, indices: Sequence[int], player: int) -> np.ndarray:
    """Boolean mask of player's pure strategies that agree with ``indices[player]`` on its reachable histories.

    Substituting any masked strategy for the player's component leaves a pure
    profile in its own equivalence class.
    """
    reach = sorted(pure_reachable_histories(space, indices)[player])
    table = space.tables[player]
    return np.all(table[:, reach] == table[indices[player], reach], axis=1)


def sample_ball(
    space: StrategySpace,
    center: Sequence[np.ndarray],
    radius: float,
    rng: np.random.Generator,
    count: int,
) -> list[np.ndarray]:
    """Draw ``count`` profiles uniformly from a Euclidean ball around ``center``, projected per player.

    Returns per-player arrays of shape ``(count, strategy_count)``.
    """
    from .dynamics import project_simplex_rows

    dims = space.strategy_counts
    total = sum(dims)
    direction = rng.standard_normal((count, total))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    scale = radius * rng.random(count) ** (1.0 / total)
    offsets = direction * scale[:, None]
    out = []
    start = 0
    for i, k in enumerate(dims):
        pts = np.asarray(center[i])[None, :] + offsets[:, start:start + k]
        out.append(project_simplex_rows(pts))
        start += k
    return out
