"""Command-line entry point: ``sdalab {simulate,attack,sgmix,sweep}``."""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from pathlib import Path

import numpy as np

from . import harness
from .attacks import ATTACKS, DisclosureState, NoBackgroundRounds, rank_partners, run_until_success
from .core import SystemConfig, make_ground_truth
from .roundsim import generate_trace
from .sgmix import attack_sgmix, simulate_sgmix

DEFAULTS = SystemConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(flag):
    def conv(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects an integer, got {s!r}")
        if v < 1:
            raise argparse.ArgumentTypeError(f"{flag} must be >= 1, got {v}")
        return v
    return conv


def _positive_float(flag):
    def conv(s):
        try:
            v = float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects a number, got {s!r}")
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{flag} must be > 0, got {v}")
        return v
    return conv


def _fraction(flag):
    def conv(s):
        v = _positive_float(flag)(s)
        if v > 1:
            raise argparse.ArgumentTypeError(f"{flag} must be in (0, 1], got {v}")
        return v
    return conv


def _rate(s):
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--alice-rate expects a number, got {s!r}")
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"--alice-rate must be in [0, 1], got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="sdalab", description="Statistical disclosure attacks on simulated mix networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a threshold-mix trace", formatter_class=fmt)
    s.add_argument("--n", type=_positive_int("--n"), default=DEFAULTS.n_users, help="number of users N")
    s.add_argument("--b", type=_positive_int("--b"), default=DEFAULTS.batch_size, help="batch size b")
    s.add_argument("--m", type=_positive_int("--m"), default=DEFAULTS.n_partners, help="target's partner count m")
    s.add_argument("--rounds", type=_positive_int("--rounds"), required=True, help="rounds to generate")
    s.add_argument("--seed", type=int, required=True, help="random seed")
    s.add_argument("--target", type=int, default=0, help="target user id")
    s.add_argument("--defense", choices=["none", "sybil"], default="none", help="target's defense")
    s.add_argument("--pseudonyms", type=_positive_int("--pseudonyms"), default=1, help="pseudonyms under sybil")
    s.add_argument("--alice-rate", type=_rate, default=0.0, help="probability of an extra target slot per round")
    s.add_argument("--out", type=Path, required=True, help="trace JSONL output")
    s.add_argument("--truth-out", type=Path, default=None, help="ground truth JSON; None writes <out>.truth.json")

    a = sub.add_parser("attack", help="run SDA on a trace", formatter_class=fmt)
    a.add_argument("--trace", type=Path, required=True, help="trace JSONL input")
    a.add_argument("--target", type=int, required=True, help="target user id")
    a.add_argument("--attack", choices=ATTACKS, default="improved", help="attack variant")
    a.add_argument("--obs-limit", type=_positive_int("--obs-limit"), default=DEFAULTS.obs_limit,
                   help="maximum target rounds to consume")
    a.add_argument("--success-fraction", type=_fraction("--success-fraction"), default=DEFAULTS.success_fraction,
                   help="fraction of partners that must be revealed")
    a.add_argument("--truth", type=Path, default=None, help="ground truth JSON; enables the success check")
    a.add_argument("--b", type=_positive_float("--b"), default=None, help="attacker's b; None uses the median round size")
    a.add_argument("--n", type=_positive_int("--n"), default=None, help="N; None reads it from --truth or uses max id + 1")
    a.add_argument("--m", type=_positive_int("--m"), default=None, help="partners to rank; None reads it from --truth")

    g = sub.add_parser("sgmix", help="simulate an SG-Mix and attack it", formatter_class=fmt)
    g.add_argument("--lambda", dest="lam", type=_positive_float("--lambda"), default=5.0, help="arrival rate")
    g.add_argument("--mu", type=_positive_float("--mu"), default=4.0, help="delay rate")
    g.add_argument("--k", type=_positive_float("--k"), default=DEFAULTS.chebyshev_k, help="Chebyshev k")
    g.add_argument("--horizon", type=_positive_float("--horizon"), default=1000.0, help="observed seconds")
    g.add_argument("--n", type=_positive_int("--n"), default=500, help="number of users N")
    g.add_argument("--m", type=_positive_int("--m"), default=5, help="target's partner count m")
    g.add_argument("--seed", type=int, required=True, help="random seed")
    g.add_argument("--target-rate", type=_positive_float("--target-rate"), default=None,
                   help="target's send rate; None means lambda / N")
    g.add_argument("--true-mu", action="store_true", help="give the attacker the true mu instead of lambda-hat")
    g.add_argument("--out", type=Path, required=True, help="event log JSONL output")
    g.add_argument("--view-prefix", type=Path, default=None,
                   help="also write <prefix>.sends.jsonl and <prefix>.deliveries.jsonl")

    w = sub.add_parser("sweep", help="run an experiment grid", formatter_class=fmt)
    w.add_argument("--grid", type=Path, required=True, help="grid JSON file")
    w.add_argument("--master-seed", type=int, required=True, help="master seed")
    w.add_argument("--out", type=Path, required=True, help="raw results CSV")
    w.add_argument("--summary-out", type=Path, default=None, help="per-config summary CSV")
    w.add_argument("--workers", type=_positive_int("--workers"), default=1, help="parallel worker processes")
    return p


def cmd_simulate(args) -> int:
    config = SystemConfig(n_users=args.n, batch_size=args.b, n_partners=args.m, rng_seed=args.seed,
                          defense=args.defense, n_pseudonyms=args.pseudonyms, alice_rate=args.alice_rate,
                          target=args.target)
    rng = np.random.default_rng(args.seed)
    truth = make_ground_truth(config, rng)
    trace = generate_trace(config, truth, args.rounds, rng)
    harness.write_trace(trace, args.out)
    harness.write_truth(truth, args.truth_out or args.out.with_suffix(".truth.json"))
    return 0


def cmd_attack(args) -> int:
    truth_data = harness.read_truth(args.truth) if args.truth else None
    trace = harness.read_trace(args.trace, args.target)
    if not any(r.alice_count for r in trace):
        raise UsageError("no target rounds: the target never sends in this trace")
    n = args.n or (truth_data["n_users"] if truth_data else
                   1 + max(int(max(r.senders.max(), r.receivers.max())) for r in trace))
    m = args.m or (len(truth_data["target_partners"]) if truth_data else None)
    if m is None:
        raise UsageError("--m is required without --truth")
    b = args.b or statistics.median(r.size for r in trace)
    config = SystemConfig(n_users=n, batch_size=max(1, int(round(b))), n_partners=m, obs_limit=args.obs_limit,
                          success_fraction=args.success_fraction, target=args.target)
    report = {"attack": args.attack, "target": args.target, "N": n, "b": b, "m": m}
    if truth_data:
        from .core import GroundTruth

        stub = GroundTruth(n, args.target, (None,) * n, (None,) * n)
        outcome = run_until_success(trace, stub, config, args.attack, true_partners=truth_data["target_partners"],
                                    batch_size=b)
        if outcome.estimate is None:
            raise UsageError("no background rounds: the improved attack could not be evaluated")
        report.update(succeeded=outcome.succeeded, first_success=outcome.observations,
                      observations_used=outcome.estimate.observations_used,
                      rounds_consumed=outcome.rounds_consumed,
                      ranked_partners=outcome.estimate.ranked_partners,
                      true_partners=sorted(truth_data["target_partners"]))
    else:
        state = DisclosureState(n, args.target, b, track_background=args.attack == "improved")
        for r in trace:
            if state.target_rounds >= args.obs_limit:
                break
            state.add(r)
        try:
            est = state.estimate(args.attack)
        except NoBackgroundRounds as exc:
            raise UsageError(str(exc))
        report.update(succeeded=None, observations_used=state.target_rounds, rounds_consumed=state.rounds_seen,
                      ranked_partners=rank_partners(est, m))
    print(json.dumps(report))
    return 0


def cmd_sgmix(args) -> int:
    config = SystemConfig(n_users=args.n, batch_size=1, n_partners=args.m, chebyshev_k=args.k, rng_seed=args.seed)
    rng = np.random.default_rng(args.seed)
    truth = make_ground_truth(config, rng)
    log = simulate_sgmix(truth, args.lam, args.mu, args.horizon, rng, target_rate=args.target_rate)
    harness.write_event_log(log, args.out)
    harness.write_truth(truth, args.out.with_suffix(".truth.json"))
    if args.view_prefix:
        harness.write_attacker_view(log, f"{args.view_prefix}.sends.jsonl", f"{args.view_prefix}.deliveries.jsonl")
    report = {"messages": len(log), "horizon": args.horizon}
    try:
        outcome, v = attack_sgmix(log, truth, args.k, mu=args.mu if args.true_mu else None)
    except ValueError as exc:
        report["attack"] = f"not run: {exc}"
    else:
        report.update(lambda_hat=v.model.lambda_hat, tau=v.model.tau, effective_b=v.effective_b,
                      target_rounds=v.target_rounds, background_rounds=v.background_rounds,
                      succeeded=outcome.succeeded, first_success=outcome.observations)
    print(json.dumps(report))
    return 0


def cmd_sweep(args) -> int:
    grid = harness.load_grid(args.grid)
    rows = harness.run_sweep(grid, args.master_seed, workers=args.workers)
    harness.write_csv(rows, args.out)
    if args.summary_out:
        harness.write_csv(harness.summarize(rows), args.summary_out)
    return 0


COMMANDS = {"simulate": cmd_simulate, "attack": cmd_attack, "sgmix": cmd_sgmix, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"sdalab: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sdalab {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"sdalab {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
