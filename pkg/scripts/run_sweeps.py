#!/usr/bin/env python3
"""Run one or more grid files and write raw + summary CSVs next to each other.

    python scripts/run_sweeps.py scripts/grids/vary_m.json --out-dir results --trials 20
"""

import argparse
import dataclasses
import logging
import time
from pathlib import Path

from sdalab import harness


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("grids", nargs="+", type=Path, help="grid JSON files")
    p.add_argument("--out-dir", type=Path, default=Path("results"))
    p.add_argument("--master-seed", type=int, default=2024)
    p.add_argument("--trials", type=int, default=None, help="override trials_per_config")
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for path in args.grids:
        grid = harness.load_grid(path)
        if args.trials:
            grid = dataclasses.replace(grid, trials_per_config=args.trials)
        t0 = time.perf_counter()
        rows = harness.run_sweep(grid, args.master_seed, workers=args.workers)
        summary = harness.summarize(rows)
        harness.write_csv(rows, args.out_dir / f"{path.stem}.csv")
        harness.write_csv(summary, args.out_dir / f"{path.stem}.summary.csv")
        print(f"{path.stem}: {len(rows)} trials in {time.perf_counter() - t0:.1f}s")
        for s in summary:
            med = "-" if s.median_obs is None else f"{s.median_obs:g}"
            print(f"  {grid.sweep_parameter}={getattr(s, grid.sweep_parameter):<6} {s.attack:<9} "
                  f"success {s.success_rate:5.0%}  median {med}")


if __name__ == "__main__":
    main()
