"""Exact repeated-game values, the meta-game over pure strategies, and episode sampling.

Values are expected total rewards over all played periods, where play
continues after each period with probability ``delta``:
``V = r + delta * P V`` over joint recall states.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .game import RepeatedGameSpec
from .strategies import StrategySpace, validate_profile

DENSE_STATE_LIMIT = 2000
FIXED_POINT_TOL = 1e-12
META_CHUNK = 256
MC_CHUNK = 10_000


def _joint_transition_tensor(space: StrategySpace) -> tuple[np.ndarray, tuple[int, ...]]:
    """Dense ``T[s, a, s']`` over the full product of per-player history sets."""
    spec = space.spec
    mon = spec.monitoring
    dims = tuple(hs.count for hs in space.histories)
    n_states = int(np.prod(dims))
    n_profiles = spec.stage.profile_count
    T = np.zeros((n_states, n_profiles, n_states))
    states = np.array(list(np.ndindex(*dims)), dtype=np.int64).reshape(n_states, len(dims))
    for a in range(n_profiles):
        actions = spec.stage.profile_tuple(a)
        for z in mon.support[a]:
            zs = mon.signal_tuple(int(z))
            nxt = np.zeros(n_states, dtype=np.int64)
            for i, hs in enumerate(space.histories):
                pair = hs.pair_index[actions[i], zs[i]]
                nxt = nxt * dims[i] + hs.successor[states[:, i], pair]
            np.add.at(T, (np.arange(n_states), a, nxt), mon.kernel[a, z])
    return T, dims


def value_of_pure_profile(space: StrategySpace, indices: Sequence[int]) -> np.ndarray:
    """Exact per-player value of a pure profile, solving over reachable joint recall states."""
    spec = space.spec
    mon = spec.monitoring
    n = spec.player_count
    rewards = spec.stage.reward_table
    tables = [space.tables[i][k] for i, k in enumerate(indices)]
    start = (0,) * n
    ids = {start: 0}
    order = [start]
    queue = deque([start])
    edges = []
    while queue:
        state = queue.popleft()
        s = ids[state]
        actions = tuple(int(tables[i][state[i]]) for i in range(n))
        a = spec.stage.profile_index(actions)
        for z in mon.support[a]:
            zs = mon.signal_tuple(int(z))
            nxt = tuple(
                int(hs.successor[state[i], hs.pair_index[actions[i], zs[i]]])
                for i, hs in enumerate(space.histories)
            )
            if nxt not in ids:
                ids[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
            edges.append((s, ids[nxt], float(mon.kernel[a, z])))
    count = len(order)
    r = np.array(
        [rewards[spec.stage.profile_index(tuple(int(tables[i][st[i]]) for i in range(n)))] for st in order]
    )
    if count <= DENSE_STATE_LIMIT:
        P = np.zeros((count, count))
        for s, t, p in edges:
            P[s, t] += p
        V = np.linalg.solve(np.eye(count) - spec.delta * P, r)
    else:
        src, dst, prob = (np.array(x) for x in zip(*edges))
        V = r.copy()
        for _ in range(100_000):
            PV = np.zeros_like(V)
            np.add.at(PV, src, prob[:, None] * V[dst])
            nxt = r + spec.delta * PV
            if np.max(np.abs(nxt - V)) < FIXED_POINT_TOL:
                V = nxt
                break
            V = nxt
        else:
            raise RuntimeError("value iteration did not converge")
    return V[0]


@dataclass(frozen=True, eq=False)
class MetaGame:
    """Normal-form game over pure strategies; ``payoffs[i]`` has shape ``strategy_counts``."""

    space: StrategySpace
    payoffs: np.ndarray
    epsilon: float = 0.0

    @property
    def player_count(self) -> int:
        return self.payoffs.shape[0]

    @property
    def strategy_counts(self) -> tuple[int, ...]:
        return self.payoffs.shape[1:]

    def to_dict(self) -> dict:
        stage = self.space.spec.stage
        return {
            "delta": self.space.spec.delta,
            "recall": list(self.space.spec.recall),
            "epsilon": self.epsilon,
            "histories": [
                [[[stage.action_names[i][a], self.space.spec.monitoring.signal_names[i][z]] for a, z in hs.decode(h)] for h in range(hs.count)]
                for i, hs in enumerate(self.space.histories)
            ],
            "strategies": [t.tolist() for t in self.space.tables],
            "payoffs": self.payoffs.tolist(),
        }


def _chunk_values(T, dims, tables, rewards, delta, epsilon, action_counts, chunk):
    """Values at the empty state for a chunk of pure profiles (rows of ``chunk``)."""
    n = len(dims)
    states = np.array(list(np.ndindex(*dims)), dtype=np.int64)
    n_states = len(states)
    B = len(chunk)
    # per-profile, per-state action of each player
    acts = [tables[i][chunk[:, i]][:, states[:, i]] for i in range(n)]
    if epsilon == 0.0:
        a = np.zeros((B, n_states), dtype=np.int64)
        for i in range(n):
            a = a * action_counts[i] + acts[i]
        P = T[np.arange(n_states)[None, :], a]
        r = rewards[a]
    else:
        w = np.ones((B, n_states, 1))
        for i in range(n):
            wi = np.full((B, n_states, action_counts[i]), epsilon / action_counts[i])
            np.put_along_axis(wi, acts[i][:, :, None], 1.0 - epsilon + epsilon / action_counts[i], axis=2)
            w = (w[:, :, :, None] * wi[:, :, None, :]).reshape(B, n_states, -1)
        P = np.einsum("bsa,sat->bst", w, T)
        r = np.einsum("bsa,an->bsn", w, rewards)
    A = np.eye(n_states)[None] - delta * P
    V = np.linalg.solve(A, r)
    return V[:, 0, :]


def build_meta_game(space: StrategySpace, epsilon: float = 0.0, workers: int = 1) -> MetaGame:
    """Fill the payoff tensor for every pure profile.

    With ``epsilon > 0`` every player's intended action is replaced by a
    uniform action with probability ``epsilon`` in each period; the tensor
    then holds values of the trembling game.  Chunk boundaries are fixed, so
    results do not depend on ``workers``.
    """
    spec = space.spec
    counts = space.strategy_counts
    n = spec.player_count
    dims = tuple(hs.count for hs in space.histories)
    total = int(np.prod(counts))
    profiles = np.array(np.unravel_index(np.arange(total), counts)).T.reshape(total, n)
    n_states = int(np.prod(dims))
    if n_states > DENSE_STATE_LIMIT:
        if epsilon != 0.0:
            raise ValueError("trembling meta-games need a dense joint state space")
        values = np.array([value_of_pure_profile(space, p) for p in profiles])
    else:
        T, dims = _joint_transition_tensor(space)
        rewards = spec.stage.reward_table
        chunks = [profiles[k:k + META_CHUNK] for k in range(0, total, META_CHUNK)]
        args = (T, dims, space.tables, rewards, spec.delta, epsilon, spec.stage.action_counts)
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda c: _chunk_values(*args, c), chunks))
        else:
            parts = [_chunk_values(*args, c) for c in chunks]
        values = np.concatenate(parts, axis=0)
    payoffs = np.moveaxis(values.reshape(*counts, n), -1, 0).copy()
    payoffs.setflags(write=False)
    return MetaGame(space, payoffs, epsilon)


def _contract_except(tensor: np.ndarray, profile: Sequence[np.ndarray], keep: int | None) -> np.ndarray:
    t = tensor
    for j in reversed(range(len(profile))):
        if j != keep:
            t = np.tensordot(t, profile[j], axes=([j], [0]))
    return t


def mixed_value(meta: MetaGame, profile: Sequence[np.ndarray]) -> np.ndarray:
    """Expected value of each player under independent mixed strategies."""
    profile = validate_profile(meta.space, profile)
    return np.array([_contract_except(meta.payoffs[i], profile, None) for i in range(meta.player_count)])


def deviation_values(meta: MetaGame, profile: Sequence[np.ndarray], player: int) -> np.ndarray:
    """``V_i(e, pi_-i)`` for every pure strategy ``e`` of ``player``."""
    return _contract_except(meta.payoffs[player], profile, player)


def deviation_values_batch(meta: MetaGame, batch: Sequence[np.ndarray], player: int) -> np.ndarray:
    """Row-wise deviation values for a batch of profiles given as ``(B, K_j)`` arrays."""
    n = meta.player_count
    if n == 2:
        other = batch[1 - player]
        table = meta.payoffs[player] if player == 0 else meta.payoffs[player].T
        return other @ table.T
    letters = "abcdefghijklmnopqrstuvwxyz"
    sub = letters[:n]
    operands = [meta.payoffs[player]]
    terms = [sub]
    for j in range(n):
        if j != player:
            operands.append(batch[j])
            terms.append("Z" + sub[j])
    expr = ",".join(terms) + "->Z" + sub[player]
    return np.einsum(expr, *operands, optimize=True)


@dataclass(frozen=True)
class Episode:
    """One sampled play: per-period actions, signals and rewards with ``(tau, N)`` shapes."""

    actions: np.ndarray
    signals: np.ndarray
    rewards: np.ndarray
    strategies: tuple[int, ...]
    explored: np.ndarray

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def total_rewards(self) -> np.ndarray:
        return self.rewards.sum(axis=0)


@dataclass(frozen=True)
class EpisodeNoise:
    """Uniform draws driving one episode.

    ``period_u[t]`` holds, for each player ``i``, an exploration coin at
    column ``2i`` and an exploration action draw at ``2i+1``; the final column
    drives the signal.
    """

    tau: int
    strategy_u: np.ndarray
    period_u: np.ndarray


def draw_noise(rng: np.random.Generator, delta: float, player_count: int) -> EpisodeNoise:
    tau = int(rng.geometric(1.0 - delta))
    u = rng.random(player_count + tau * (2 * player_count + 1))
    return EpisodeNoise(tau, u[:player_count], u[player_count:].reshape(tau, 2 * player_count + 1))


@dataclass
class BatchResult:
    totals: np.ndarray  # (B, N) realized total rewards
    taus: np.ndarray  # (B,)
    strategies: np.ndarray  # (B, N) sampled pure strategies
    log_likelihoods: list[np.ndarray] | None = None  # per player (B, K_i)
    literal_scores: list[np.ndarray] | None = None  # per player (B, K_i)
    episodes: list[Episode] = field(default_factory=list)


def _draw_strategies(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(weights, axis=1)
    e = (cum <= (u * cum[:, -1])[:, None]).sum(axis=1)
    return np.minimum(e, weights.shape[1] - 1)


def simulate_batch(
    space: StrategySpace,
    weights: Sequence[np.ndarray],
    noise: Sequence[EpisodeNoise],
    epsilon: float = 0.0,
    scores: str | None = None,
    record: bool = False,
) -> BatchResult:
    """Play one episode per noise record, vectorized across the batch.

    ``weights[i]`` is either ``(K_i,)`` (shared) or ``(B, K_i)``.  ``scores``
    may be ``"pure_score"``, ``"paper_literal"``, ``"both"`` or None.  Each
    row's result depends only on its own weights and noise.
    """
    spec = space.spec
    n = spec.player_count
    B = len(noise)
    counts = spec.stage.action_counts
    w = [np.broadcast_to(np.atleast_2d(np.asarray(x, dtype=float)), (B, space.strategy_counts[i])) for i, x in enumerate(weights)]
    taus = np.array([nz.tau for nz in noise], dtype=np.int64)
    max_tau = int(taus.max()) if B else 0
    U = np.zeros((B, max_tau, 2 * n + 1))
    for b, nz in enumerate(noise):
        U[b, :nz.tau] = nz.period_u
    su = np.array([nz.strategy_u for nz in noise]).reshape(B, n)
    strat = np.stack([_draw_strategies(w[i], su[:, i]) for i in range(n)], axis=1)
    cum_kernel = np.cumsum(spec.monitoring.kernel, axis=1)
    rewards = spec.stage.reward_table
    want_pure = scores in ("pure_score", "both")
    want_literal = scores in ("paper_literal", "both")
    loglik = [np.zeros((B, space.strategy_counts[i])) for i in range(n)] if want_pure else None
    literal = [np.zeros((B, space.strategy_counts[i])) for i in range(n)] if want_literal else None
    if want_literal:
        conds = []
        for i in range(n):
            hc = space.histories[i].count
            onehot = space._onehots[i].reshape(-1, hc, counts[i])
            conds.append((w[i][:, :, None, None] * onehot[None]).sum(axis=1))
    hist = np.zeros((B, n), dtype=np.int64)
    totals = np.zeros((B, n))
    log_match = [np.log((1.0 - epsilon) + epsilon / k) for k in counts]
    log_miss = [np.log(epsilon / k) if epsilon > 0 else -np.inf for k in counts]
    if record:
        rec_a = np.zeros((B, max_tau, n), dtype=np.int64)
        rec_z = np.zeros((B, max_tau, n), dtype=np.int64)
        rec_x = np.zeros((B, max_tau, n), dtype=bool)
    rows = np.arange(B)
    for t in range(max_tau):
        alive = rows[taus > t]
        u = U[alive, t]
        h = hist[alive]
        acts = np.zeros((len(alive), n), dtype=np.int64)
        explored = np.zeros((len(alive), n), dtype=bool)
        for i in range(n):
            intended = space.tables[i][strat[alive, i], h[:, i]]
            explored[:, i] = u[:, 2 * i] < epsilon
            random_action = np.minimum((u[:, 2 * i + 1] * counts[i]).astype(np.int64), counts[i] - 1)
            acts[:, i] = np.where(explored[:, i], random_action, intended)
        profile = np.ravel_multi_index(tuple(acts.T), counts)
        z = (cum_kernel[profile] <= u[:, 2 * n][:, None]).sum(axis=1)
        z = np.minimum(z, cum_kernel.shape[1] - 1)
        # guard against landing on a zero-probability signal through rounding
        bad = spec.monitoring.kernel[profile, z] == 0
        if np.any(bad):
            for k in np.flatnonzero(bad):
                z[k] = spec.monitoring.support[profile[k]][-1]
        zs = np.array(np.unravel_index(z, spec.monitoring.signal_counts)).T.reshape(len(alive), n)
        totals[alive] += rewards[profile]
        for i in range(n):
            if want_pure or want_literal:
                match = space.tables[i][:, h[:, i]].T == acts[:, i][:, None]
            if want_pure:
                loglik[i][alive] += np.where(match, log_match[i], log_miss[i])
            if want_literal:
                p_hat = (1.0 - epsilon) * conds[i][alive, h[:, i], acts[:, i]] + epsilon / counts[i]
                literal[i][alive] += (1.0 - epsilon) * match / p_hat[:, None]
        for i, hs in enumerate(space.histories):
            hist[alive, i] = hs.successor[h[:, i], hs.pair_index[acts[:, i], zs[:, i]]]
        if record:
            rec_a[alive, t] = acts
            rec_z[alive, t] = zs
            rec_x[alive, t] = explored
    result = BatchResult(totals, taus, strat, loglik, literal)
    if record:
        for b in range(B):
            tb = taus[b]
            result.episodes.append(
                Episode(
                    rec_a[b, :tb].copy(),
                    rec_z[b, :tb].copy(),
                    rewards[np.ravel_multi_index(tuple(rec_a[b, :tb].T), counts)],
                    tuple(int(e) for e in strat[b]),
                    rec_x[b, :tb].copy(),
                )
            )
    return result


def sample_episode(
    space: StrategySpace,
    profile: Sequence[np.ndarray],
    rng: np.random.Generator | int,
    epsilon: float = 0.0,
) -> Episode:
    """Sample one episode: each player draws one pure strategy, then plays it until termination."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    profile = validate_profile(space, profile)
    noise = draw_noise(rng, space.spec.delta, space.player_count)
    return simulate_batch(space, profile, [noise], epsilon, record=True).episodes[0]


def monte_carlo_values(
    space: StrategySpace,
    profile: Sequence[np.ndarray],
    episodes: int,
    rng: np.random.Generator,
    epsilon: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and standard error of total rewards over ``episodes`` plays."""
    profile = validate_profile(space, profile)
    totals = []
    n = space.player_count
    for start in range(0, episodes, MC_CHUNK):
        noise = [draw_noise(rng, space.spec.delta, n) for _ in range(min(MC_CHUNK, episodes - start))]
        totals.append(simulate_batch(space, profile, noise, epsilon).totals)
    totals = np.concatenate(totals)
    return totals.mean(axis=0), totals.std(axis=0, ddof=1) / np.sqrt(len(totals))


def per_period_values(spec: RepeatedGameSpec, values: np.ndarray) -> np.ndarray:
    """Normalize expected totals to per-period averages, ``(1 - delta) V``."""
    return (1.0 - spec.delta) * np.asarray(values)
