"""Converged fraction of the dynamics around the grim-trigger profile as the start radius grows."""

import argparse
import csv
import warnings
from pathlib import Path

from recallgames.dynamics import QReplicatorConfig
from recallgames.estimator import EpsilonGreedyConfig
from recallgames.folk import basin_experiment
from recallgames.scenarios import pd_standard
from recallgames.strategies import StrategySpace
from recallgames.valuation import build_meta_game


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--radii", default="0.02,0.05,0.1,0.2,0.4")
    parser.add_argument("--seeds", type=int, default=50)
    parser.add_argument("--steps", type=int, default=5000)
    parser.add_argument("--q", type=float, default=1.0)
    parser.add_argument("--gamma", type=float, default=0.01)
    parser.add_argument("--m", type=float, default=10.0)
    parser.add_argument("--delta", type=float, default=0.9)
    parser.add_argument("--stochastic", action="store_true", help="epsilon-greedy REINFORCE instead of exact gradients")
    parser.add_argument("--epsilon", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/basin_study.csv")
    args = parser.parse_args()

    scenario = pd_standard(args.delta, (1, 1))
    space = StrategySpace(scenario.spec)
    meta = build_meta_game(space)
    target = scenario.profile(space, "grim_trigger")
    common = dict(q=args.q, gamma=args.gamma, p=1.0, m=args.m, max_steps=args.steps, record_every=args.steps)
    cfg = EpsilonGreedyConfig(epsilon=args.epsilon, **common) if args.stochastic else QReplicatorConfig(**common)

    rows = []
    for radius in (float(r) for r in args.radii.split(",")):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # non-strict targets at low delta are the point of some sweeps
            result = basin_experiment(meta, target, radius, args.seeds, cfg, stochastic=args.stochastic, master_seed=args.seed)
        rows.append({"radius": radius, "converged_fraction": result.converged_fraction, "mean_final_distance": result.mean_final_distance})
        print(f"radius {radius:g}: {result.converged}/{result.tried} converged")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


if __name__ == "__main__":
    main()
