"""Command-line experiment runner.

Every mode writes ``manifest.json`` plus its CSV or JSON outputs into
``--out``.  Settings resolve in three layers: built-in defaults, then the
``--config`` file (YAML or JSON, keys named like the long flags with
underscores), then flags given explicitly on the command line.

Per-task randomness comes from ``SeedSequence([master_seed, task])`` with
fixed task numbers (see ``TASKS``), so results do not depend on execution
order or worker count.

Exit codes: 0 success, 2 invalid input, 3 strategy space over capacity.
``check-eq`` instead reports its verdict: 0 strict, 1 equilibrium but not
strict, 2 not an equilibrium.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .behavioural import PublicHistories, check_strict_spne
from .dynamics import QReplicatorConfig, run_exact
from .equilibrium import check_strict, check_variational
from .estimator import EpsilonGreedyConfig, diagnose_noise, run_stochastic
from .folk import DEFAULT_BASIN_THRESHOLD, basin_experiment, feasible_ir_set
from .game import validate_reward_deducibility
from .scenarios import Scenario, load_scenario
from .strategies import DEFAULT_STRATEGY_CAP, CapacityError, StrategySpace, uniform_profile
from .valuation import build_meta_game, mixed_value, per_period_values

log = logging.getLogger("recallgames")

MODES = ("simulate", "check-eq", "folk-set", "basin", "meta-game", "diagnose")
TASKS = {"start": 0, "simulate": 1, "diagnose": 2}

DEFAULTS = {
    "scenario": "pd_standard",
    "game": None,
    "profile": None,
    "target": None,
    "q": 1.0,
    "gamma": "1.0",
    "p": 0.6,
    "m": 1.0,
    "epsilon": None,
    "delta": None,
    "recall": None,
    "episodes": 2000,
    "seeds": 100,
    "seed": 0,
    "radius": 0.02,
    "out": "out",
    "estimator": "pure_score",
    "exact": False,
    "workers": 1,
    "record_every": 10,
    "stop_tolerance": 0.0,
    "threshold": DEFAULT_BASIN_THRESHOLD,
    "samples": 200,
    "points": None,
    "variant": "mixed",
    "start": "uniform",
    "cap": DEFAULT_STRATEGY_CAP,
    "reference": "trembling",
    "variational": False,
}
# epsilon doubles as exploration rate and meta-game tremble; only the former defaults to nonzero
EPSILON_DEFAULTS = {"meta-game": 0.0}
EXPLORATION_DEFAULT = 0.05


class ExitCode:
    OK = 0
    INVALID = 2
    CAPACITY = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recallgames", description=__doc__.splitlines()[0])
    parser.add_argument("mode", choices=MODES)
    S = argparse.SUPPRESS
    parser.add_argument("--config", help="YAML or JSON file of settings")
    parser.add_argument("--scenario", default=S, help="pd_standard, pd_variant_noisy(e1,e2,e3), matching_pennies, custom")
    parser.add_argument("--game", default=S, help="game file (implies the custom scenario)")
    parser.add_argument("--profile", default=S, help="reference profile name or profile file")
    parser.add_argument("--target", default=S, help="profile whose class distance is tracked (simulate, diagnose)")
    parser.add_argument("--q", type=float, default=S)
    parser.add_argument("--gamma", default=S, help="step scale, one value or one per player separated by commas")
    parser.add_argument("--p", type=float, default=S, help="step decay exponent in (0.5, 1]")
    parser.add_argument("--m", type=float, default=S, help="step offset")
    parser.add_argument("--epsilon", type=float, default=S, help="exploration rate (meta-game: tremble)")
    parser.add_argument("--delta", type=float, default=S, help="continuation probability")
    parser.add_argument("--recall", default=S, help="recall per player, e.g. 1 or 1,2")
    parser.add_argument("--episodes", type=int, default=S, help="iterations (one episode each when stochastic)")
    parser.add_argument("--seeds", type=int, default=S, help="number of basin runs")
    parser.add_argument("--seed", type=int, default=S, help="master seed")
    parser.add_argument("--radius", type=float, default=S)
    parser.add_argument("--out", default=S, help="output directory")
    parser.add_argument("--estimator", choices=("paper_literal", "pure_score"), default=S)
    parser.add_argument("--exact", action="store_true", default=S, help="use exact gradients")
    parser.add_argument("--workers", type=int, default=S, help="threads for meta-game construction")
    parser.add_argument("--record-every", dest="record_every", type=int, default=S)
    parser.add_argument("--stop-tolerance", dest="stop_tolerance", type=float, default=S)
    parser.add_argument("--threshold", type=float, default=S, help="basin convergence distance")
    parser.add_argument("--samples", type=int, default=S, help="estimator draws per diagnosed step")
    parser.add_argument("--points", default=S, help="payoff points for folk-set, e.g. '2,2;1.5,0.5'")
    parser.add_argument("--variant", choices=("mixed", "strict", "pure"), default=S)
    parser.add_argument("--start", choices=("uniform", "random"), default=S)
    parser.add_argument("--cap", type=int, default=S, help="largest strategy count per player")
    parser.add_argument("--reference", choices=("trembling", "plain"), default=S)
    parser.add_argument("--variational", action="store_true", default=S, help="check-eq: also test the variational conditions at --q")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    doc = {}
    cfg["epsilon"] = EPSILON_DEFAULTS.get(args.mode, EXPLORATION_DEFAULT)
    if args.config:
        doc = io.read_document(args.config) or {}
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        cfg.update(doc)
    explicit = {k: v for k, v in vars(args).items() if k in DEFAULTS}
    cfg.update(explicit)
    cfg["mode"] = args.mode
    if cfg["game"] is not None and cfg["scenario"] == DEFAULTS["scenario"]:
        cfg["scenario"] = "custom"
    return cfg


def _ints(text) -> tuple[int, ...] | None:
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(","))


def _gamma(text):
    if isinstance(text, (int, float)):
        return float(text)
    values = tuple(float(x) for x in str(text).split(","))
    return values[0] if len(values) == 1 else values


def _scenario(cfg: dict) -> Scenario:
    scenario = load_scenario(cfg["scenario"], cfg["delta"], None, cfg["game"])
    recall = _ints(cfg["recall"])
    if recall is None:
        return scenario
    if len(recall) == 1:
        recall = recall * scenario.spec.player_count
    return replace(scenario, spec=scenario.spec.with_recall(recall))


def _space(cfg: dict, scenario: Scenario) -> StrategySpace:
    return StrategySpace(scenario.spec, cap=cfg["cap"])


def _profile(scenario: Scenario, space: StrategySpace, ref) -> tuple[np.ndarray, ...]:
    if ref in scenario.rules:
        return scenario.profile(space, ref)
    path = Path(str(ref))
    if not path.exists():
        raise ValueError(f"{ref!r} is neither a reference profile of {scenario.name} nor a file")
    return io.load_profile(space, path)


def _start(cfg: dict, scenario: Scenario, space: StrategySpace):
    if cfg["profile"] is not None:
        return _profile(scenario, space, cfg["profile"])
    if cfg["start"] == "uniform":
        return uniform_profile(space)
    rng = np.random.default_rng(io.derived_seed(cfg["seed"], TASKS["start"]))
    return tuple(rng.dirichlet(np.ones(k)) for k in space.strategy_counts)


def _dynamics(cfg: dict, stochastic: bool):
    common = dict(
        q=float(cfg["q"]),
        gamma=_gamma(cfg["gamma"]),
        p=float(cfg["p"]),
        m=float(cfg["m"]),
        max_steps=int(cfg["episodes"]),
        stop_tolerance=float(cfg["stop_tolerance"]),
        record_every=int(cfg["record_every"]),
    )
    if stochastic:
        return EpsilonGreedyConfig(epsilon=float(cfg["epsilon"]), estimator=cfg["estimator"], **common)
    return QReplicatorConfig(**common)


def _schedule(cfg: dict, tasks: Sequence[str]) -> list[str]:
    return [f"{t}: SeedSequence([{cfg['seed']}, {TASKS[t]}])" for t in tasks]


def _trajectory_rows(traj):
    for rec, prof in zip(traj.records, traj.profiles):
        for i, w in enumerate(prof):
            for k, x in enumerate(w):
                yield {"n": rec.n, "player": i, "component": k, "weight": float(x)}


def _summary_rows(traj, meta, n_players):
    for rec, prof in zip(traj.records, traj.profiles):
        values = rec.values if rec.values is not None else mixed_value(meta, prof)
        row = {"n": rec.n, "gradient_norm": rec.gradient_norm, "distance_to_target": rec.distance}
        row.update({f"values_{i}": float(values[i]) for i in range(n_players)})
        yield row


def run_simulate(cfg: dict, out: Path) -> int:
    scenario = _scenario(cfg)
    space = _space(cfg, scenario)
    meta = build_meta_game(space, workers=cfg["workers"])
    start = _start(cfg, scenario, space)
    target = _profile(scenario, space, cfg["target"]) if cfg["target"] is not None else None
    stochastic = not cfg["exact"]
    dyn = _dynamics(cfg, stochastic)
    if stochastic:
        traj = run_stochastic(space, start, dyn, io.derived_seed(cfg["seed"], TASKS["simulate"]), target)
    else:
        traj = run_exact(meta, start, dyn, target)
    n = space.player_count
    io.write_csv(out / "trajectory.csv", "trajectory", n, _trajectory_rows(traj))
    io.write_csv(out / "summary.csv", "summary", n, _summary_rows(traj, meta, n))
    last = traj.records[-1]
    print(f"steps={traj.steps} gradient_norm={last.gradient_norm:.3e} distance_to_target={last.distance}")
    io.write_manifest(out, cfg, cfg["seed"], _schedule(cfg, ["start", "simulate"]))
    return ExitCode.OK


def _report_dict(report) -> dict:
    player, strategy, gain = report.worst_deviation
    doc = {
        "verdict": report.verdict,
        "is_equilibrium": report.is_equilibrium,
        "is_strict": report.is_strict,
        "worst_deviation": {"player": player, "strategy": strategy, "gain": gain},
        "class_note": report.class_note,
        "min_losing_margin": report.min_losing_margin,
        "values": list(report.values),
    }
    if report.worst_out_of_class is not None:
        i, e, g = report.worst_out_of_class
        doc["worst_out_of_class"] = {"player": i, "strategy": e, "gain": g}
    return doc


VERDICT_CODES = {"strict": 0, "equilibrium-non-strict": 1, "not-equilibrium": 2}


def run_check_eq(cfg: dict, out: Path) -> int:
    scenario = _scenario(cfg)
    if cfg["profile"] is None:
        raise ValueError("check-eq needs --profile")
    spec = scenario.spec
    for v in validate_reward_deducibility(spec):
        log.warning("reward not deducible: %s", v)
    path = Path(str(cfg["profile"]))
    if path.exists() and (io.read_document(path) or {}).get("kind") == "behavioural":
        return _check_spne(cfg, scenario, path, out)
    space = _space(cfg, scenario)
    meta = build_meta_game(space, workers=cfg["workers"])
    profile = _profile(scenario, space, cfg["profile"])
    report = check_strict(meta, profile)
    doc = _report_dict(report)
    doc["profile"] = io.profile_to_dict(space, profile)
    if cfg["variational"]:
        var = check_variational(meta, profile, cfg["q"], seed=io.derived_seed(cfg["seed"], 0))
        doc["variational"] = asdict(var)
    io.write_json(out / "verdict.json", doc)
    print(f"verdict: {report.verdict}")
    print(f"worst deviation: player {doc['worst_deviation']['player']} strategy {doc['worst_deviation']['strategy']} gain {doc['worst_deviation']['gain']:.6g}")
    if report.min_losing_margin is not None:
        print(f"smallest out-of-class loss: {report.min_losing_margin:.6g}")
    print(f"class note: {report.class_note}")
    io.write_manifest(out, cfg, cfg["seed"], [])
    return VERDICT_CODES[report.verdict]


def _check_spne(cfg: dict, scenario: Scenario, path: Path, out: Path) -> int:
    ph = PublicHistories(scenario.spec)
    profile = io.behavioural_from_dict(ph, io.read_document(path))
    report = check_strict_spne(scenario.spec, profile, ph)
    verdict = "strict" if report.is_strict_spne else "not-equilibrium"
    player, history, action, gain = report.worst
    doc = {
        "verdict": verdict,
        "kind": "behavioural",
        "worst_deviation": {"player": player, "history": ph.label(history), "action": action, "gain": gain},
    }
    io.write_json(out / "verdict.json", doc)
    print(f"verdict: {verdict} (subgame perfect check)")
    print(f"worst one-shot deviation: player {player} at history {ph.label(history)!r} gain {gain:.6g}")
    io.write_manifest(out, cfg, cfg["seed"], [])
    return VERDICT_CODES[verdict]


def _points(text) -> list[tuple[float, ...]]:
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return [tuple(float(x) for x in p) for p in text]
    return [tuple(float(x) for x in part.split(",")) for part in str(text).split(";") if part.strip()]


def run_folk_set(cfg: dict, out: Path) -> int:
    scenario = _scenario(cfg)
    spec = scenario.spec
    stage = spec.stage
    n = stage.player_count
    geo = feasible_ir_set(stage, cfg["variant"], seed=cfg["seed"])
    hull_rows = [
        {"vertex": k, **{f"payoffs_{i}": float(v[i]) for i in range(n)}} for k, v in enumerate(geo.hull_vertices)
    ]
    io.write_csv(out / "hull.csv", "hull", n, hull_rows)
    minmax_rows = [
        {"player": i, "mixed": float(geo.minmax_mixed[i]), "pure": float(geo.minmax_pure[i]), "exact": bool(geo.minmax_exact)}
        for i in range(n)
    ]
    io.write_csv(out / "minmax.csv", "minmax", n, minmax_rows)
    points = [("query", p) for p in _points(cfg["points"])]
    if cfg["profile"] is not None:
        space = _space(cfg, scenario)
        meta = build_meta_game(space, workers=cfg["workers"])
        prof = _profile(scenario, space, cfg["profile"])
        points.append(("profile", tuple(float(x) for x in per_period_values(spec, mixed_value(meta, prof)))))
    rows = []
    for kind, point in points:
        if len(point) != n:
            raise ValueError(f"point {point} has {len(point)} coordinates, expected {n}")
        rows.append(
            {
                **{f"point_{i}": float(point[i]) for i in range(n)},
                "in_hull": geo.in_hull(point),
                "individually_rational": geo.individually_rational(point),
                "member": geo.contains(point),
                "variant": f"{geo.variant}:{kind}",
            }
        )
        print(f"{kind} {point}: {'member' if geo.contains(point) else 'outside'}")
    io.write_csv(out / "membership.csv", "membership", n, rows)
    io.write_manifest(out, cfg, cfg["seed"], [])
    return ExitCode.OK


def run_basin(cfg: dict, out: Path) -> int:
    if int(cfg["seeds"]) < 1:
        raise ValueError("basin needs at least one seed")
    if cfg["profile"] is None:
        raise ValueError("basin needs --profile naming the target")
    scenario = _scenario(cfg)
    space = _space(cfg, scenario)
    meta = build_meta_game(space, workers=cfg["workers"])
    target = _profile(scenario, space, cfg["profile"])
    stochastic = not cfg["exact"]
    result = basin_experiment(
        meta, target, float(cfg["radius"]), int(cfg["seeds"]), _dynamics(cfg, stochastic),
        stochastic=stochastic, threshold=float(cfg["threshold"]), master_seed=int(cfg["seed"]),
    )
    io.write_csv(out / "basin.csv", "basin", space.player_count, result.rows())
    io.write_json(
        out / "basin_summary.json",
        {"tried": result.tried, "converged": result.converged, "converged_fraction": result.converged_fraction,
         "mean_final_distance": result.mean_final_distance, "threshold": result.threshold, "config": result.config},
    )
    print(f"converged {result.converged}/{result.tried} (mean final distance {result.mean_final_distance:.3e})")
    schedule = [f"start {s}: SeedSequence([{cfg['seed']}, {s}, 0])" for s in result.seeds[:1]]
    if stochastic:
        schedule.append(f"run s: SeedSequence([{cfg['seed']}, s, 1]) for s in 0..{result.tried - 1}")
    io.write_manifest(out, cfg, cfg["seed"], schedule)
    return ExitCode.OK


def run_meta_game(cfg: dict, out: Path) -> int:
    scenario = _scenario(cfg)
    space = _space(cfg, scenario)
    meta = build_meta_game(space, epsilon=float(cfg["epsilon"]), workers=cfg["workers"])
    io.write_json(out / "meta_game.json", meta.to_dict())
    print(f"strategy counts {space.strategy_counts}")
    io.write_manifest(out, cfg, cfg["seed"], [])
    return ExitCode.OK


def run_diagnose(cfg: dict, out: Path) -> int:
    scenario = _scenario(cfg)
    space = _space(cfg, scenario)
    dyn = _dynamics(cfg, stochastic=True)
    start = _start(cfg, scenario, space)
    traj = run_stochastic(space, start, dyn, io.derived_seed(cfg["seed"], TASKS["simulate"]))
    tremble = dyn.epsilon if cfg["reference"] == "trembling" else 0.0
    meta = build_meta_game(space, epsilon=tremble, workers=cfg["workers"])
    steps = [r.n for r in traj.records]
    rng = np.random.default_rng(io.derived_seed(cfg["seed"], TASKS["diagnose"]))
    diag = diagnose_noise(meta, steps, traj.profiles, int(cfg["samples"]), dyn.q, dyn.p, rng, dyn.epsilon, dyn.estimator)
    rows = [
        {"n": int(n), "bias_norm": float(b), "variance": float(s), "ell_sigma": diag.ell_sigma, "ell_b": diag.ell_b,
         "estimator": diag.variant}
        for n, b, s in zip(diag.steps, diag.bias_norm, diag.second_moment)
    ]
    io.write_csv(out / "diagnostics.csv", "diagnostics", space.player_count, rows)
    print(
        f"ell_sigma={diag.ell_sigma:.3f} ell_b={diag.ell_b:.3f} "
        f"bias condition {'holds' if diag.bias_condition else 'fails'}, noise condition {'holds' if diag.noise_condition else 'fails'}"
    )
    io.write_manifest(out, cfg, cfg["seed"], _schedule(cfg, ["start", "simulate", "diagnose"]))
    return ExitCode.OK


RUNNERS = {
    "simulate": run_simulate,
    "check-eq": run_check_eq,
    "folk-set": run_folk_set,
    "basin": run_basin,
    "meta-game": run_meta_game,
    "diagnose": run_diagnose,
}


def run(cfg: dict) -> int:
    """Dispatch a resolved configuration; returns the process exit code."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        return RUNNERS[cfg["mode"]](cfg, out)
    except CapacityError as exc:
        log.error("%s", exc)
        return ExitCode.CAPACITY
    except (ValueError, KeyError, FileNotFoundError) as exc:
        log.error("invalid input: %s", exc)
        return ExitCode.INVALID


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ValueError, FileNotFoundError) as exc:
        log.error("invalid config: %s", exc)
        return ExitCode.INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
