"""Minmax values, feasible and individually rational payoff sets, trigger profiles and basin experiments."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .dynamics import QReplicatorConfig, run_exact_batch
from .equilibrium import EquilibriumReport, check_strict
from .estimator import EpsilonGreedyConfig, run_stochastic_batch
from .game import RepeatedGameSpec, StageGame
from .strategies import CapacityError, StrategySpace, pure_indices, pure_profile, sample_ball
from .valuation import MetaGame, build_meta_game

HULL_TOL = 1e-9
MINMAX_RESTARTS = 20
DEFAULT_BASIN_THRESHOLD = 0.05


def _opponent_payoffs(game: StageGame, player: int) -> np.ndarray:
    """Player's rewards with own action first: shape ``(A_i, *opponent action counts)``."""
    return np.moveaxis(game.rewards[..., player], player, 0)


def pure_minmax(game: StageGame, player: int) -> float:
    """Smallest payoff opponents can hold the player to with pure actions, the player best-responding."""
    table = _opponent_payoffs(game, player)
    return float(table.max(axis=0).min())


def _lp_min_over(matrix: np.ndarray) -> tuple[float, np.ndarray]:
    """Minimize ``max_rows (matrix @ y)`` over distributions ``y`` on the columns."""
    rows, cols = matrix.shape
    c = np.zeros(cols + 1)
    c[-1] = 1.0
    a_ub = np.hstack([matrix, -np.ones((rows, 1))])
    a_eq = np.hstack([np.ones((1, cols)), np.zeros((1, 1))])
    res = linprog(
        c, A_ub=a_ub, b_ub=np.zeros(rows), A_eq=a_eq, b_eq=[1.0],
        bounds=[(0, None)] * cols + [(None, None)], method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"minmax linear program failed: {res.message}")
    y = np.clip(res.x[:cols], 0.0, None)
    y /= y.sum()
    return float(res.x[-1]), y


@dataclass(frozen=True)
class MinmaxResult:
    value: float
    exact: bool  # False when the value is an upper bound from local search
    opponents: tuple[np.ndarray, ...]


def mixed_minmax_details(game: StageGame, player: int, seed: int = 0) -> MinmaxResult:
    """Mixed minmax; exact by linear programming with one opponent, a local-search upper bound otherwise."""
    table = _opponent_payoffs(game, player)
    opp_counts = table.shape[1:]
    if len(opp_counts) == 1:
        value, y = _lp_min_over(table)
        return MinmaxResult(value, True, (y,))
    rng = np.random.default_rng(seed)
    starts = [tuple(np.eye(k)[a] for k, a in zip(opp_counts, prof)) for prof in itertools.product(*(range(k) for k in opp_counts))]
    starts += [tuple(rng.dirichlet(np.ones(k)) for k in opp_counts) for _ in range(MINMAX_RESTARTS)]
    best_value, best = np.inf, None
    for start in starts:
        ys = [y.copy() for y in start]
        value = np.inf
        for _ in range(200):
            improved = False
            for j in range(len(ys)):
                t = table
                # contract every other opponent, keeping the player's axis and opponent j's axis
                for k in reversed(range(len(ys))):
                    if k != j:
                        t = np.tensordot(t, ys[k], axes=([k + 1], [0]))
                v, y = _lp_min_over(t)
                if v < value - 1e-12:
                    improved = True
                value = min(value, v)
                ys[j] = y
            if not improved:
                break
        if value < best_value:
            best_value, best = value, tuple(ys)
    return MinmaxResult(float(best_value), False, best)


def mixed_minmax(game: StageGame, player: int, seed: int = 0) -> float:
    return mixed_minmax_details(game, player, seed).value


def _hull_vertices(points: np.ndarray) -> np.ndarray:
    unique = np.unique(points, axis=0)
    if len(unique) <= 1:
        return unique
    centered = unique - unique.mean(axis=0)
    _, sing, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int((sing > 1e-10 * max(1.0, sing[0])).sum())
    coords = centered @ vt[:rank].T
    if rank == 1:
        return unique[[int(np.argmin(coords[:, 0])), int(np.argmax(coords[:, 0]))]]
    try:
        hull = ConvexHull(coords)
    except QhullError:
        return unique
    return unique[np.sort(hull.vertices)]


def in_hull(points: np.ndarray, x: np.ndarray, tol: float = HULL_TOL) -> bool:
    """Whether ``x`` is a convex combination of the rows of ``points``, up to L1 slack ``tol``."""
    points = np.asarray(points, dtype=float)
    x = np.asarray(x, dtype=float)
    k, d = points.shape
    # variables: weights (k), positive slack (d), negative slack (d)
    c = np.concatenate([np.zeros(k), np.ones(2 * d)])
    a_eq = np.vstack([
        np.hstack([points.T, np.eye(d), -np.eye(d)]),
        np.concatenate([np.ones(k), np.zeros(2 * d)])[None, :],
    ])
    b_eq = np.concatenate([x, [1.0]])
    res = linprog(c, A_eq=a_eq, b_eq=b_eq, bounds=[(0, None)] * (k + 2 * d), method="highs")
    return res.status == 0 and res.fun <= tol


VARIANTS = ("mixed", "strict", "pure")


@dataclass(frozen=True)
class PayoffGeometry:
    """Stage payoff hull plus per-player minmax thresholds for one individually rational variant."""

    hull_vertices: np.ndarray
    minmax_mixed: np.ndarray
    minmax_pure: np.ndarray
    variant: str
    minmax_exact: bool

    @property
    def thresholds(self) -> np.ndarray:
        return self.minmax_pure if self.variant == "pure" else self.minmax_mixed

    def in_hull(self, point: Sequence[float]) -> bool:
        return in_hull(self.hull_vertices, point)

    def individually_rational(self, point: Sequence[float], tol: float = HULL_TOL) -> bool:
        point = np.asarray(point, dtype=float)
        if self.variant == "strict":
            return bool(np.all(point > self.thresholds + tol))
        return bool(np.all(point >= self.thresholds - tol))

    def contains(self, point: Sequence[float]) -> bool:
        return self.individually_rational(point) and self.in_hull(point)


def feasible_ir_set(game: StageGame, variant: str = "mixed", seed: int = 0) -> PayoffGeometry:
    """Convex hull of stage payoffs with minmax thresholds.

    ``variant`` is ``"mixed"`` (weakly above mixed minmax), ``"strict"``
    (strictly above mixed minmax) or ``"pure"`` (weakly above pure minmax).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    n = game.player_count
    details = [mixed_minmax_details(game, i, seed) for i in range(n)]
    mixed = np.array([d.value for d in details])
    pure = np.array([pure_minmax(game, i) for i in range(n)])
    vertices = _hull_vertices(game.reward_table)
    return PayoffGeometry(vertices, mixed, pure, variant, all(d.exact for d in details))


def _punishment_profile(game: StageGame) -> tuple[int, ...]:
    if game.player_count != 2:
        raise ValueError("a punishment profile must be given explicitly for more than two players")
    out = []
    for i in range(2):
        j = 1 - i
        # i's action that holds j to j's pure minmax
        table = _opponent_payoffs(game, j)  # (A_j, A_i)
        out.append(int(np.argmin(table.max(axis=0))))
    return tuple(out)


def _phase_window(cycle: Sequence[tuple[int, ...]], window: int) -> bool:
    """Whether every length-``window`` cycle segment predicts a unique next profile."""
    L = len(cycle)
    seen: dict[tuple, tuple] = {}
    for phi in range(L):
        seg = tuple(cycle[(phi + j) % L] for j in range(window))
        nxt = cycle[(phi + window) % L]
        if seen.setdefault(seg, nxt) != nxt:
            return False
    return True


def required_recall(cycle: Sequence[tuple[int, ...]], punishment_length: int) -> int:
    """Smallest recall that lets a window locate the cycle phase and remember a deviation."""
    window = 1
    while not _phase_window(cycle, window):
        window += 1
    return max(window, punishment_length, 1)


@dataclass(frozen=True)
class TriggerProfile:
    profile: tuple[np.ndarray, ...]
    indices: tuple[int, ...]
    report: EquilibriumReport
    meta: MetaGame
    recall_needed: int


def trigger_rule(cycle, punishment, window, recall, observed) -> tuple[int, ...]:
    """Profile prescribed after the observed profiles (oldest first) of a private history.

    Follow the cycle while the last ``window`` observations are a cycle
    segment (anchored at the start of play while the history is still
    shorter than ``recall``); otherwise play the punishment profile.
    """
    L = len(cycle)
    k = len(observed)
    recent = observed[max(0, k - window):]
    start = k - len(recent)
    if k < recall:
        if all(recent[j] == cycle[(start + j) % L] for j in range(len(recent))):
            return cycle[k % L]
        return punishment
    for phi in range(L):
        if all(recent[j] == cycle[(phi + start + j) % L] for j in range(len(recent))):
            return cycle[(phi + k) % L]
    return punishment


def build_trigger_profile(
    spec: RepeatedGameSpec,
    target_cycle: Sequence[Sequence[int]],
    punishment_length: int = 1,
    punishment: Sequence[int] | None = None,
    space: StrategySpace | None = None,
) -> TriggerProfile:
    """Pure profile that plays ``target_cycle`` and punishes any observed departure.

    Players inspect their last ``punishment_length`` observations (at least
    enough to locate the cycle phase).  Because a punishment profile that is
    not on the cycle is itself a departure, punishment perpetuates itself in
    that case, giving grim-trigger behaviour.
    """
    mon = spec.monitoring
    if not mon.is_perfect:
        raise ValueError("trigger profiles need perfect monitoring")
    if punishment_length < 1:
        raise ValueError("punishment_length must be at least 1")
    stage = spec.stage
    cycle = [tuple(int(a) for a in prof) for prof in target_cycle]
    if not cycle:
        raise ValueError("target cycle is empty")
    for prof in cycle:
        if len(prof) != stage.player_count or any(not 0 <= a < k for a, k in zip(prof, stage.action_counts)):
            raise ValueError(f"cycle entry {prof} is not an action profile")
    punish = tuple(int(a) for a in punishment) if punishment is not None else _punishment_profile(stage)
    needed = required_recall(cycle, punishment_length)
    if min(spec.recall) < needed:
        raise CapacityError(f"trigger profile needs recall {needed}, spec has {spec.recall}", needed)
    window = needed
    space = space if space is not None else StrategySpace(spec)
    indices = []
    for i in range(stage.player_count):
        decode = {pair: next(iter(profiles)) for pair, profiles in mon.observation_map(i).items()}
        recall = spec.recall[i]

        def rule(history, i=i, decode=decode, recall=recall):
            observed = [stage.profile_tuple(decode[pair]) for pair in history]
            return trigger_rule(cycle, punish, window, recall, observed)[i]

        indices.append(space.strategy_from_rule(i, rule))
    meta = build_meta_game(space)
    profile = pure_profile(space, indices)
    return TriggerProfile(profile, tuple(indices), check_strict(meta, profile), meta, needed)


@dataclass
class BasinResult:
    target: tuple[int, ...] | None
    radius: float
    tried: int
    converged: int
    mean_final_distance: float
    threshold: float
    config: dict
    seeds: list[int] = field(default_factory=list)
    final_distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    episodes_used: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def converged_fraction(self) -> float:
        return self.converged / self.tried if self.tried else 0.0

    def rows(self) -> list[dict]:
        return [
            {
                "seed": s,
                "converged": int(d < self.threshold),
                "final_distance": float(d),
                "episodes_used": int(e),
            }
            for s, d, e in zip(self.seeds, self.final_distances, self.episodes_used)
        ]


def basin_starts(space: StrategySpace, target, radius: float, seeds: Sequence[int], master_seed: int) -> list[np.ndarray]:
    """One start per seed, drawn from the radius ball with a generator derived from ``(master_seed, seed)``."""
    rows = []
    for s in seeds:
        rng = np.random.default_rng(np.random.SeedSequence([master_seed, s, 0]))
        rows.append(sample_ball(space, target, radius, rng, 1))
    return [np.concatenate([r[i] for r in rows]) for i in range(space.player_count)]


def basin_experiment(
    meta: MetaGame,
    target: Sequence[np.ndarray],
    radius: float,
    seeds: int,
    cfg: QReplicatorConfig,
    stochastic: bool = False,
    threshold: float = DEFAULT_BASIN_THRESHOLD,
    master_seed: int = 0,
) -> BasinResult:
    """Run the dynamics from ``seeds`` random starts near ``target`` and count convergence to its class."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if seeds < 1:
        raise ValueError("at least one seed is required")
    space = meta.space
    report = check_strict(meta, target)
    if not report.is_strict:
        warnings.warn(f"basin target is not certified strict ({report.verdict})", stacklevel=2)
    seed_list = list(range(seeds))
    starts = basin_starts(space, target, radius, seed_list, master_seed)
    if stochastic:
        if not isinstance(cfg, EpsilonGreedyConfig):
            raise ValueError("stochastic basin experiments need an EpsilonGreedyConfig")
        run_seeds = [np.random.SeedSequence([master_seed, s, 1]) for s in seed_list]
        run = run_stochastic_batch(space, starts, cfg, run_seeds, target)
    else:
        run = run_exact_batch(meta, starts, cfg, target)
    dist = run.distances
    config = asdict(cfg) if is_dataclass(cfg) else dict(cfg)
    config.update({"stochastic": stochastic, "master_seed": master_seed})
    return BasinResult(
        target=pure_indices(target),
        radius=radius,
        tried=seeds,
        converged=int((dist < threshold).sum()),
        mean_final_distance=float(dist.mean()),
        threshold=threshold,
        config=config,
        seeds=seed_list,
        final_distances=dist,
        episodes_used=run.steps,
    )
