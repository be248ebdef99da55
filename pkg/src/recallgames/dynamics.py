"""q-gradients, Euclidean simplex projection and the deterministic q-replicator process."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .game import SIMPLEX_TOL
from .strategies import ClassTarget, validate_profile
from .valuation import MetaGame, deviation_values, deviation_values_batch


def q_transform(weights: np.ndarray, values: np.ndarray, q: float) -> np.ndarray:
    """``w^q * (values - <w^q, values> / sum(w^q))`` along the last axis, with ``0**0 == 1``."""
    if q < 0:
        raise ValueError(f"q must be nonnegative, got {q}")
    wq = np.power(np.asarray(weights, dtype=float), q)
    mean = (wq * values).sum(axis=-1, keepdims=True) / wq.sum(axis=-1, keepdims=True)
    return wq * (values - mean)


def q_gradient(meta: MetaGame, profile: Sequence[np.ndarray], q: float) -> list[np.ndarray]:
    """Per-player q-gradient of the expected value at ``profile``."""
    if q < 0:
        raise ValueError(f"q must be nonnegative, got {q}")
    return [q_transform(w, deviation_values(meta, profile, i), q) for i, w in enumerate(profile)]


def q_gradient_batch(meta: MetaGame, batch: Sequence[np.ndarray], q: float) -> list[np.ndarray]:
    return [q_transform(w, deviation_values_batch(meta, batch, i), q) for i, w in enumerate(batch)]


def project_simplex_rows(points: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto the probability simplex by the sorted-threshold rule."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot project non-finite points")
    order = np.argsort(-x, axis=1, kind="stable")
    u = np.take_along_axis(x, order, axis=1)
    css = np.cumsum(u, axis=1)
    j = np.arange(1, x.shape[1] + 1)
    positive = u - (css - 1.0) / j > 0
    rho = x.shape[1] - 1 - np.argmax(positive[:, ::-1], axis=1)
    theta = (css[np.arange(len(x)), rho] - 1.0) / (rho + 1)
    return np.maximum(x - theta[:, None], 0.0)


def project_simplex(point: np.ndarray) -> np.ndarray:
    return project_simplex_rows(np.asarray(point, dtype=float)[None, :])[0]


@dataclass(frozen=True)
class QReplicatorConfig:
    """Step sizes ``gamma_i / (n + m)**p`` applied to the q-gradient."""

    q: float = 1.0
    gamma: float | tuple[float, ...] = 0.1
    p: float = 1.0
    m: float = 1.0
    max_steps: int = 10_000
    stop_tolerance: float = 0.0
    record_every: int = 1

    def __post_init__(self):
        if self.q < 0:
            raise ValueError("q must be nonnegative")
        if not 0.5 < self.p <= 1.0:
            raise ValueError("p must lie in (0.5, 1]")
        if self.m <= 0:
            raise ValueError("m must be positive")
        gammas = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if np.any(gammas < 0):
            raise ValueError("step sizes must be nonnegative")
        if self.max_steps < 0 or self.record_every < 1 or self.stop_tolerance < 0:
            raise ValueError("invalid iteration controls")

    def gammas(self, player_count: int) -> np.ndarray:
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if g.size == 1:
            return np.full(player_count, float(g[0]))
        if g.size != player_count:
            raise ValueError(f"{g.size} step sizes given for {player_count} players")
        return g

    def step_sizes(self, n: int, player_count: int) -> np.ndarray:
        return self.gammas(player_count) / (n + self.m) ** self.p


@dataclass(frozen=True)
class StepRecord:
    n: int
    step_sizes: tuple[float, ...]
    gradient_norm: float
    distance: float | None
    values: tuple[float, ...] | None = None


@dataclass
class Trajectory:
    profiles: list[tuple[np.ndarray, ...]] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    steps: int = 0

    @property
    def final(self) -> tuple[np.ndarray, ...]:
        return self.profiles[-1]


def check_on_simplex(batch: Sequence[np.ndarray], tol: float = SIMPLEX_TOL) -> None:
    for w in batch:
        w = np.atleast_2d(w)
        if np.any(w < -tol) or np.any(np.abs(w.sum(axis=1) - 1.0) > tol):
            raise AssertionError("iterate left the simplex product")


def _values(meta: MetaGame, profile) -> tuple[float, ...]:
    return tuple(float(np.dot(profile[i], deviation_values(meta, profile, i))) for i in range(meta.player_count))


def run_exact(
    meta: MetaGame,
    start: Sequence[np.ndarray],
    cfg: QReplicatorConfig,
    target: Sequence[np.ndarray] | None = None,
) -> Trajectory:
    """Iterate ``pi_i <- proj(pi_i + gamma_i^n v_i^q(pi))`` from ``start``.

    Stops after ``cfg.max_steps`` updates, or earlier once the distance to the
    target's class (or, without a target, the gradient norm) drops below
    ``cfg.stop_tolerance``.
    """
    space = meta.space
    profile = validate_profile(space, start)
    klass = ClassTarget(space, target) if target is not None else None
    n_players = meta.player_count
    traj = Trajectory()
    n = 0
    while True:
        grad = q_gradient(meta, profile, cfg.q)
        gnorm = float(np.sqrt(sum(float(g @ g) for g in grad)))
        dist = klass.distance(profile) if klass is not None else None
        sizes = cfg.step_sizes(n, n_players)
        done = n >= cfg.max_steps or (
            cfg.stop_tolerance > 0 and (dist if dist is not None else gnorm) < cfg.stop_tolerance
        )
        if n % cfg.record_every == 0 or done:
            traj.profiles.append(tuple(w.copy() for w in profile))
            traj.records.append(StepRecord(n, tuple(sizes), gnorm, dist, _values(meta, profile)))
        if done:
            break
        profile = tuple(project_simplex(w + sizes[i] * grad[i]) for i, w in enumerate(profile))
        check_on_simplex(profile)
        n += 1
    traj.steps = n
    return traj


@dataclass
class BatchRun:
    final: list[np.ndarray]  # per player (B, K_i)
    distances: np.ndarray | None
    steps: np.ndarray  # (B,) updates applied to each row
    gradient_norms: np.ndarray


def run_exact_batch(
    meta: MetaGame,
    starts: Sequence[np.ndarray],
    cfg: QReplicatorConfig,
    target: Sequence[np.ndarray] | None = None,
) -> BatchRun:
    """Run many exact trajectories in lock step; ``starts[i]`` has shape ``(B, K_i)``.

    Rows that meet the stopping rule are frozen, so each row matches a
    separate call to :func:`run_exact`.
    """
    klass = ClassTarget(meta.space, target) if target is not None else None
    batch = [np.array(w, dtype=float, copy=True) for w in starts]
    B = batch[0].shape[0]
    check_on_simplex(batch)
    active = np.ones(B, dtype=bool)
    steps = np.zeros(B, dtype=np.int64)
    gnorm = np.zeros(B)
    dist = None
    for n in range(cfg.max_steps + 1):
        grad = q_gradient_batch(meta, batch, cfg.q)
        gnorm = np.sqrt(sum((g * g).sum(axis=1) for g in grad))
        if klass is not None:
            dist = klass.gaps(batch)
        if cfg.stop_tolerance > 0:
            crit = dist if dist is not None else gnorm
            active &= crit >= cfg.stop_tolerance
        if n == cfg.max_steps or not active.any():
            break
        sizes = cfg.step_sizes(n, meta.player_count)
        for i in range(len(batch)):
            moved = project_simplex_rows(batch[i][active] + sizes[i] * grad[i][active])
            batch[i][active] = moved
        steps[active] += 1
    if klass is not None:
        dist = klass.distances(batch)
    return BatchRun(batch, dist, steps, gnorm)
