"""Built-in games and reference profiles."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .game import MonitoringStructure, RepeatedGameSpec, StageGame, perfect_monitoring
from .strategies import StrategySpace, pure_profile

# A rule maps a private history (tuple of (own action, own signal) pairs) to an action.
Rule = Callable[[tuple[tuple[int, int], ...]], int]

C, D = 0, 1


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: RepeatedGameSpec
    rules: dict[str, tuple[Rule, ...]] = field(default_factory=dict)

    def profile(self, space: StrategySpace, name: str):
        """Pure profile for a named reference rule set."""
        if name not in self.rules:
            raise KeyError(f"scenario {self.name!r} has no profile {name!r}; known: {sorted(self.rules)}")
        indices = [space.strategy_from_rule(i, rule) for i, rule in enumerate(self.rules[name])]
        return pure_profile(space, indices)

    def indices(self, space: StrategySpace, name: str) -> tuple[int, ...]:
        return tuple(space.strategy_from_rule(i, rule) for i, rule in enumerate(self.rules[name]))


def prisoners_dilemma(cc=2.0, cd=0.0, dc=3.0, dd=1.0) -> StageGame:
    rewards = np.array([[[cc, cc], [cd, dc]], [[dc, cd], [dd, dd]]], dtype=float)
    return StageGame(rewards, (("C", "D"), ("C", "D")), ("row", "column"))


def _pd_rules(stage: StageGame) -> dict[str, tuple[Rule, ...]]:
    """Reference profiles for a PD under perfect monitoring, where signals index action profiles."""

    def last_profile(h):
        return stage.profile_tuple(h[-1][1])

    def always(action):
        return lambda h: action

    def grim(h):
        return C if not h or last_profile(h) == (C, C) else D

    def tit_for_tat(player, first):
        def rule(h):
            return first if not h else last_profile(h)[1 - player]
        return rule

    return {
        "all_d": (always(D), always(D)),
        "all_c": (always(C), always(C)),
        "grim_trigger": (grim, grim),
        "tit_for_tat": (tit_for_tat(0, C), tit_for_tat(1, C)),
        "d_then_tft": (always(D), tit_for_tat(1, D)),
    }


def pd_standard(delta: float = 0.9, recall=(1, 1)) -> Scenario:
    stage = prisoners_dilemma()
    spec = RepeatedGameSpec(stage, perfect_monitoring(stage), delta, tuple(recall))
    return Scenario("pd_standard", spec, _pd_rules(stage))


def noisy_pd_monitoring(eps1: float, eps2: float, eps3: float) -> MonitoringStructure:
    """Each player privately observes a signal of the other's action.

    Player 0's signal is about player 1 (``c``/``d``) and vice versa.  After
    mutual cooperation the signal pair is (c, c) with probability
    ``1 - eps1 - eps2 - eps3``; player 0 alone misreads with ``eps1``, player
    1 alone with ``eps2``, and both with ``eps3``.  Signals are accurate
    after every other profile.
    """
    eps = (eps1, eps2, eps3)
    if any(not 0.0 <= e < 1.0 for e in eps) or sum(eps) >= 1.0:
        raise ValueError(f"noise levels must lie in [0, 1) and sum below 1, got {eps}")
    # joint signal index = 2 * (player 0 signal) + (player 1 signal); 0 = c, 1 = d
    kernel = np.zeros((4, 4))
    kernel[0] = [1.0 - sum(eps), eps2, eps1, eps3]
    kernel[1, 2] = 1.0  # (C, D): player 0 sees d, player 1 sees c
    kernel[2, 1] = 1.0  # (D, C): player 0 sees c, player 1 sees d
    kernel[3, 3] = 1.0
    return MonitoringStructure((2, 2), (2, 2), kernel, (("c", "d"), ("c", "d")))


def pd_variant_noisy(eps1=0.01, eps2=0.01, eps3=0.01, delta: float = 0.9, recall=(1, 1)) -> Scenario:
    stage = prisoners_dilemma(4.0, 0.0, 5.0, 2.0)
    spec = RepeatedGameSpec(stage, noisy_pd_monitoring(eps1, eps2, eps3), delta, tuple(recall))

    def matched(h):
        # cooperate after (C, c) or (D, d): own action agrees with the signal about the opponent
        return C if not h or h[-1][0] == h[-1][1] else D

    def always(action):
        return lambda h: action

    rules = {"reference": (matched, matched), "all_d": (always(D), always(D))}
    return Scenario("pd_variant_noisy", spec, rules)


def matching_pennies(delta: float = 0.0, recall=(0, 0)) -> Scenario:
    rewards = np.array([[[1, -1], [-1, 1]], [[-1, 1], [1, -1]]], dtype=float)
    stage = StageGame(rewards, (("H", "T"), ("H", "T")), ("matcher", "mismatcher"))
    return Scenario("matching_pennies", RepeatedGameSpec(stage, perfect_monitoring(stage), delta, tuple(recall)))


SCENARIOS = ("pd_standard", "pd_variant_noisy", "matching_pennies", "custom")
_CALL = re.compile(r"^\s*(\w+)\s*(?:\((.*)\))?\s*$")


def parse_scenario_name(text: str) -> tuple[str, tuple[float, ...]]:
    """Split ``"pd_variant_noisy(0.01,0.02,0)"`` into a name and numeric arguments."""
    match = _CALL.match(text)
    if not match:
        raise ValueError(f"cannot parse scenario {text!r}")
    name, args = match.group(1), match.group(2)
    values = tuple(float(a) for a in args.split(",")) if args and args.strip() else ()
    return name, values


def load_scenario(name: str, delta: float | None = None, recall=None, game_file: str | None = None) -> Scenario:
    """Look up a built-in scenario, optionally overriding continuation probability and recall."""
    base, args = parse_scenario_name(name)
    kwargs = {}
    if delta is not None:
        kwargs["delta"] = delta
    if recall is not None:
        kwargs["recall"] = tuple(recall)
    if base == "pd_standard":
        return pd_standard(*args, **kwargs)
    if base == "pd_variant_noisy":
        if len(args) not in (0, 3):
            raise ValueError("pd_variant_noisy takes three noise levels")
        return pd_variant_noisy(*args, **kwargs)
    if base == "matching_pennies":
        return matching_pennies(**kwargs)
    if base == "custom":
        if game_file is None:
            raise ValueError("the custom scenario needs a game file")
        from .io import load_game

        spec = load_game(game_file)
        if delta is not None:
            spec = spec.with_delta(delta)
        if recall is not None:
            spec = spec.with_recall(recall)
        return Scenario("custom", spec)
    raise ValueError(f"unknown scenario {base!r}; expected one of {SCENARIOS}")
