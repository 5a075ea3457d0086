#!/usr/bin/env python3
"""Scaled b x m grid at N=2000 for both attacks, with or without the Sybil defense.

Prints successes and median required observations per cell.
"""

import argparse

from sdalab.core import SystemConfig
from sdalab.harness import ExperimentGrid, run_sweep, summarize


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--b", type=int, nargs="+", default=[10, 25, 50])
    p.add_argument("--m", type=int, nargs="+", default=[5, 10, 20])
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--alice-rate", type=float, default=0.01)
    p.add_argument("--defense", choices=["none", "sybil"], default="none")
    p.add_argument("--master-seed", type=int, default=20240)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()

    print(f"{'b':>4} {'m':>4} {'standard':>16} {'improved':>16}")
    for b in args.b:
        base = SystemConfig(n_users=args.n, batch_size=b, alice_rate=args.alice_rate, defense=args.defense)
        grid = ExperimentGrid(base, "m", tuple(args.m), trials_per_config=args.trials)
        cells = {}
        for s in summarize(run_sweep(grid, args.master_seed + b, workers=args.workers)):
            wins = round(s.success_rate * s.trials)
            cells[(s.m, s.attack)] = f"{wins:>3}/{s.trials} {'-' if s.median_obs is None else f'{s.median_obs:g}':>7}"
        for m in args.m:
            print(f"{b:>4} {m:>4} {cells[(m, 'standard')]:>16} {cells[(m, 'improved')]:>16}")


if __name__ == "__main__":
    main()
