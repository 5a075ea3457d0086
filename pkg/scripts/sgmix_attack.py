#!/usr/bin/env python3
"""Repeated SG-Mix simulations attacked through virtual rounds.

Reports how many trials reveal enough partners and how many target
windows the attack needed.
"""

import argparse
import statistics

import numpy as np

from sdalab.core import SystemConfig, make_ground_truth
from sdalab.sgmix import attack_sgmix, simulate_sgmix


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--mu", type=float, default=4.0)
    p.add_argument("--k", type=float, default=3.0)
    p.add_argument("--horizon", type=float, default=9e4)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--attack", choices=["standard", "improved"], default="improved")
    p.add_argument("--true-mu", action="store_true", help="size windows with the true mu")
    p.add_argument("--seed", type=int, default=9)
    args = p.parse_args()

    wins, needed = 0, []
    for trial in range(args.trials):
        cfg = SystemConfig(n_users=args.n, n_partners=args.m, batch_size=1)
        rng = np.random.default_rng([args.seed, trial])
        truth = make_ground_truth(cfg, rng)
        log = simulate_sgmix(truth, args.lam, args.mu, args.horizon, rng)
        outcome, v = attack_sgmix(log, truth, args.k, args.attack, mu=args.mu if args.true_mu else None)
        wins += outcome.succeeded
        if outcome.succeeded:
            needed.append(outcome.observations)
        print(f"trial {trial:>3}: target windows {v.target_rounds:>4}, background {v.background_rounds:>6}, "
              f"b_eff {v.effective_b:5.2f}, first success {outcome.observations}")
    med = statistics.median(needed) if needed else None
    print(f"{wins}/{args.trials} succeeded; median target windows needed: {med}")


if __name__ == "__main__":
    main()
