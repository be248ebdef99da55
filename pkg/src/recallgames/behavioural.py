"""Behavioural strategies under perfect monitoring with a common recall length.

A behavioural profile gives each player an action distribution after every
public history, i.e. every sequence of at most ``l`` observed action
profiles.  Histories are ordered by length, then lexicographically by
profile index.  Profiles are tuples of ``(history_count, A_i)`` arrays;
batched helpers take ``(B, history_count, A_i)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import QReplicatorConfig, project_simplex_rows, q_transform
from .game import SIMPLEX_TOL, RepeatedGameSpec

SPNE_TOL = 1e-9

BehaviouralProfile = tuple[np.ndarray, ...]


class PublicHistories:
    """Public histories of length 0..recall over action profiles, with truncating successors."""

    def __init__(self, spec: RepeatedGameSpec):
        if not spec.monitoring.is_perfect:
            raise ValueError("behavioural strategies need perfect monitoring")
        if len(set(spec.recall)) != 1:
            raise ValueError(f"behavioural strategies need a common recall, got {spec.recall}")
        self.spec = spec
        self.recall = spec.recall[0]
        count = spec.stage.profile_count
        self.histories = tuple(
            h for length in range(self.recall + 1) for h in itertools.product(range(count), repeat=length)
        )
        self.index = {h: k for k, h in enumerate(self.histories)}
        H = len(self.histories)
        self.successor = np.zeros((H, count), dtype=np.int64)
        for k, h in enumerate(self.histories):
            for a in range(count):
                nxt = (h + (a,))[len(h) + 1 - self.recall:] if self.recall > 0 else ()
                self.successor[k, a] = self.index[nxt]
        self.step = np.zeros((H, count, H))
        self.step[np.arange(H)[:, None], np.arange(count)[None, :], self.successor] = 1.0

    @property
    def count(self) -> int:
        return len(self.histories)

    def label(self, k: int) -> str:
        return "|".join(self.spec.stage.profile_label(a) for a in self.histories[k])


def validate_behavioural(ph: PublicHistories, profile: Sequence[np.ndarray]) -> BehaviouralProfile:
    counts = ph.spec.stage.action_counts
    if len(profile) != len(counts):
        raise ValueError("one conditional table per player is required")
    out = []
    for i, table in enumerate(profile):
        table = np.asarray(table, dtype=float)
        if table.shape != (ph.count, counts[i]):
            raise ValueError(f"player {i} table has shape {table.shape}, expected {(ph.count, counts[i])}")
        if np.any(table < -SIMPLEX_TOL) or np.any(np.abs(table.sum(axis=1) - 1.0) > SIMPLEX_TOL):
            raise ValueError(f"player {i} has a conditional off the simplex")
        out.append(table)
    return tuple(out)


def behavioural_from_rule(ph: PublicHistories, rule) -> BehaviouralProfile:
    """Pure behavioural profile from ``rule(history) -> action profile``; histories are profile-index tuples."""
    counts = ph.spec.stage.action_counts
    tables = [np.zeros((ph.count, k)) for k in counts]
    for h, hist in enumerate(ph.histories):
        for i, a in enumerate(rule(hist)):
            tables[i][h, a] = 1.0
    return tuple(tables)


def _joint(ph: PublicHistories, batch: Sequence[np.ndarray]) -> np.ndarray:
    """Profile probabilities ``(B, H, |A|)`` from per-player conditionals ``(B, H, A_i)``."""
    p = batch[0]
    for w in batch[1:]:
        p = (p[..., :, None] * w[..., None, :]).reshape(*p.shape[:-1], -1)
    return p


def continuation_values_batch(ph: PublicHistories, batch: Sequence[np.ndarray]) -> np.ndarray:
    """``V[b, h, i]`` for a batch of behavioural profiles."""
    spec = ph.spec
    p = _joint(ph, batch)
    P = np.einsum("bha,hat->bht", p, ph.step)
    r = p @ spec.stage.reward_table
    A = np.eye(ph.count)[None] - spec.delta * P
    return np.linalg.solve(A, r)


@dataclass(frozen=True)
class ContinuationValueTable:
    histories: PublicHistories
    values: np.ndarray  # (H, N)

    def value(self, player: int, history: Sequence[int]) -> float:
        return float(self.values[self.histories.index[tuple(history)], player])


def continuation_values(spec: RepeatedGameSpec, profile: Sequence[np.ndarray], ph: PublicHistories | None = None) -> ContinuationValueTable:
    """Solve ``V_h = sum_a pi_h(a) (R(a) + delta V_(h,a))`` over all public histories."""
    ph = ph if ph is not None else PublicHistories(spec)
    profile = validate_behavioural(ph, profile)
    V = continuation_values_batch(ph, [t[None] for t in profile])[0]
    return ContinuationValueTable(ph, V)


def one_shot_deviation_values(ph: PublicHistories, batch: Sequence[np.ndarray], player: int) -> np.ndarray:
    """``U[b, h, alpha]``: player's value at ``h`` when its conditional at ``h`` alone is set to ``alpha``."""
    B = batch[0].shape[0]
    H = ph.count
    A = batch[player].shape[-1]
    expanded = []
    for j, w in enumerate(batch):
        w = np.repeat(w[:, None, None], H, axis=1)
        w = np.repeat(w, A, axis=2).copy()  # (B, H, A, H, A_j)
        if j == player:
            for h in range(H):
                w[:, h, :, h, :] = np.eye(A)[None]
        expanded.append(w.reshape(B * H * A, H, -1))
    V = continuation_values_batch(ph, expanded).reshape(B, H, A, H, -1)
    idx = np.arange(H)
    return V[:, idx, :, idx, player].transpose(1, 0, 2)


def behavioural_q_gradient_batch(ph: PublicHistories, batch: Sequence[np.ndarray], q: float) -> list[np.ndarray]:
    return [q_transform(batch[i], one_shot_deviation_values(ph, batch, i), q) for i in range(len(batch))]


def behavioural_q_gradient(spec: RepeatedGameSpec, profile: Sequence[np.ndarray], q: float, ph: PublicHistories | None = None) -> list[np.ndarray]:
    """Per-player ``(H, A_i)`` q-gradients, perturbing one history's conditional at a time."""
    ph = ph if ph is not None else PublicHistories(spec)
    profile = validate_behavioural(ph, profile)
    grads = behavioural_q_gradient_batch(ph, [t[None] for t in profile], q)
    return [g[0] for g in grads]


@dataclass(frozen=True)
class SPNEReport:
    is_strict_spne: bool
    is_pure: bool
    worst: tuple[int, int, int, float] | None  # (player, history, action, gain over prescribed action)


def check_strict_spne(spec: RepeatedGameSpec, profile: Sequence[np.ndarray], ph: PublicHistories | None = None) -> SPNEReport:
    """Every one-shot deviation at every history must lose by more than ``SPNE_TOL``."""
    ph = ph if ph is not None else PublicHistories(spec)
    profile = validate_behavioural(ph, profile)
    pure = all(np.all(np.isclose(t.max(axis=1), 1.0, atol=SIMPLEX_TOL)) for t in profile)
    base = continuation_values_batch(ph, [t[None] for t in profile])[0]
    worst = None
    for i, table in enumerate(profile):
        U = one_shot_deviation_values(ph, [t[None] for t in profile], i)[0]
        prescribed = table.argmax(axis=1)
        for h in range(ph.count):
            for a in range(table.shape[1]):
                if pure and a == prescribed[h]:
                    continue
                gain = float(U[h, a] - base[h, i])
                if worst is None or gain > worst[3]:
                    worst = (i, h, a, gain)
    strict = pure and (worst is None or worst[3] < -SPNE_TOL)
    return SPNEReport(strict, pure, worst)


def behavioural_distance(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    """Largest total-variation gap over all players and histories."""
    return float(max(0.5 * np.abs(np.asarray(x) - np.asarray(y)).sum(axis=-1).max() for x, y in zip(a, b)))


def _project_tables(tables: np.ndarray) -> np.ndarray:
    shape = tables.shape
    return project_simplex_rows(tables.reshape(-1, shape[-1])).reshape(shape)


@dataclass
class BehaviouralTrajectory:
    profiles: list[BehaviouralProfile] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def final(self) -> BehaviouralProfile:
        return self.profiles[-1]


def run_behavioural(
    spec: RepeatedGameSpec,
    start: Sequence[np.ndarray],
    cfg: QReplicatorConfig,
    target: Sequence[np.ndarray] | None = None,
) -> BehaviouralTrajectory:
    """Projected q-gradient ascent on every history's conditional, step sizes ``gamma_i / (n + m)**p``."""
    ph = PublicHistories(spec)
    profile = validate_behavioural(ph, start)
    traj = BehaviouralTrajectory()
    n = 0
    while True:
        grads = behavioural_q_gradient_batch(ph, [t[None] for t in profile], cfg.q)
        gnorm = float(np.sqrt(sum((g**2).sum() for g in grads)))
        dist = behavioural_distance(profile, target) if target is not None else None
        done = n >= cfg.max_steps or (
            cfg.stop_tolerance > 0 and (dist if dist is not None else gnorm) < cfg.stop_tolerance
        )
        if n % cfg.record_every == 0 or done:
            traj.profiles.append(tuple(t.copy() for t in profile))
            if dist is not None:
                traj.distances.append(dist)
        if done:
            break
        sizes = cfg.step_sizes(n, len(profile))
        profile = tuple(_project_tables(t + sizes[i] * grads[i][0]) for i, t in enumerate(profile))
        n += 1
    traj.steps = n
    return traj


@dataclass(frozen=True)
class BehaviouralVariationalReport:
    c1_holds: bool
    c1_value: float
    c2_holds: bool
    c2_worst: float
    epsilon_used: float
    samples: int


def check_behavioural_variational(
    spec: RepeatedGameSpec,
    profile: Sequence[np.ndarray],
    q: float,
    epsilon: float = 0.02,
    sample_count: int = 500,
    seed: int = 0,
    ladder: Sequence[float] = (1.0, 0.5, 0.25),
) -> BehaviouralVariationalReport:
    """Vertex test of ``<v(pi*), pi - pi*>`` and sampled test of ``<v(pi), pi - pi*> < 0`` near ``pi*``.

    Samples are uniform in the Euclidean ball, projected history by history,
    plus one-history probes toward every action.
    """
    ph = PublicHistories(spec)
    center = validate_behavioural(ph, profile)
    grads = behavioural_q_gradient(spec, center, q, ph)
    c1 = float(sum((g.max(axis=1) - (g * t).sum(axis=1)).sum() for g, t in zip(grads, center)))
    rng = np.random.default_rng(seed)
    sizes = [t.size for t in center]
    total = sum(sizes)
    holds, worst, used = False, np.inf, epsilon
    for factor in ladder:
        used = epsilon * factor
        direction = rng.standard_normal((sample_count, total))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        offsets = direction * (used * rng.random(sample_count) ** (1.0 / total))[:, None]
        batch = []
        start = 0
        for t, k in zip(center, sizes):
            pts = t[None] + offsets[:, start:start + k].reshape(sample_count, *t.shape)
            batch.append(_project_tables(pts))
            start += k
        probes = [[] for _ in center]
        for i, t in enumerate(center):
            for h in range(ph.count):
                for a in range(t.shape[1]):
                    moved = t.copy()
                    moved[h] = t[h] + 0.5 * used * (np.eye(t.shape[1])[a] - t[h])
                    if np.allclose(moved, t):
                        continue
                    for j in range(len(center)):
                        probes[j].append(moved if j == i else center[j])
        batch = [np.concatenate([b, np.array(p)]) for b, p in zip(batch, probes)]
        moved = np.array([
            max(np.abs(b[k] - c).max() for b, c in zip(batch, center)) > 0 for k in range(len(batch[0]))
        ])
        batch = [b[moved] for b in batch]
        g = behavioural_q_gradient_batch(ph, batch, q)
        inner = sum((gi * (b - c[None])).sum(axis=(1, 2)) for gi, b, c in zip(g, batch, center))
        worst = float(inner.max())
        holds = worst < -1e-12
        if holds:
            break
    return BehaviouralVariationalReport(c1 <= 1e-9, c1, holds, worst, used, sample_count)
