"""Experiment sweeps, result aggregation and all file formats.

File formats
------------
* trace JSONL: one ``{"round", "senders", "receivers"}`` object per line,
  both arrays sorted independently so the sender/receiver pairing is lost.
* event-log JSONL: one ``{"id", "sender", "receiver", "sent", "delivered"}``
  object per message; attacker views go to separate ``sends``/``deliveries``
  files without ids.
* truth JSON: the target, her partners and weights, and the pseudonyms.
* grid JSON: ``base`` (SystemConfig fields), ``sweep_parameter`` (N, b or m),
  ``sweep_values``, ``trials_per_config``, ``attacks``.
* raw and summary CSV, headers in ``RAW_HEADER`` / ``SUMMARY_HEADER``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .attacks import ATTACKS, required_observations
from .core import GroundTruth, SystemConfig, make_ground_truth, make_round
from .roundsim import Trace, iter_blocks

log = logging.getLogger(__name__)

SWEEP_FIELDS = {"N": "n_users", "b": "batch_size", "m": "n_partners"}
RAW_HEADER = "config_id,N,b,m,attack,defense,trial,seed,observations_used,succeeded"
SUMMARY_HEADER = "config_id,N,b,m,attack,defense,trials,success_rate,median_obs,mean_obs"
EXHAUSTED = -1


@dataclass(frozen=True)
class ExperimentGrid:
    base: SystemConfig
    sweep_parameter: str
    sweep_values: tuple
    trials_per_config: int = 100
    attacks: tuple = ATTACKS

    def __post_init__(self):
        if self.sweep_parameter not in SWEEP_FIELDS:
            raise ValueError(f"sweep_parameter must be one of {tuple(SWEEP_FIELDS)}, got {self.sweep_parameter!r}")
        values = tuple(self.sweep_values)
        if not values:
            raise ValueError("sweep_values must not be empty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError(f"sweep_values must be strictly increasing, got {list(values)}")
        if self.trials_per_config < 1:
            raise ValueError("trials_per_config must be >= 1")
        if not self.attacks or any(a not in ATTACKS for a in self.attacks):
            raise ValueError(f"attacks must be a non-empty subset of {ATTACKS}, got {self.attacks}")
        object.__setattr__(self, "sweep_values", values)
        object.__setattr__(self, "attacks", tuple(self.attacks))

    def configs(self) -> list[SystemConfig]:
        name = SWEEP_FIELDS[self.sweep_parameter]
        return [dataclasses.replace(self.base, **{name: v}) for v in self.sweep_values]


@dataclass(frozen=True)
class ResultRow:
    config_id: int
    N: int
    b: int
    m: int
    attack: str
    defense: str
    trial: int
    seed: int
    observations_used: int
    succeeded: bool

    def __post_init__(self):
        if self.succeeded != (self.observations_used != EXHAUSTED):
            raise ValueError("succeeded must be false exactly when observations_used == -1")


@dataclass(frozen=True)
class SummaryRow:
    config_id: int
    N: int
    b: int
    m: int
    attack: str
    defense: str
    trials: int
    success_rate: float
    median_obs: float | None
    mean_obs: float | None


def derive_seed(master_seed: int, config_id: int, attack: str, trial: int) -> int:
    """First 8 bytes (big endian) of sha256("master|config|attack|trial")."""
    key = f"{master_seed}|{config_id}|{attack}|{trial}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def run_trial(config: SystemConfig, attack: str, seed: int, block: int = 1024) -> int | None:
    """One independent experiment: fresh ground truth, fresh traffic."""
    rng = np.random.default_rng(seed)
    truth = make_ground_truth(config, rng)
    return required_observations(iter_blocks(config, truth, rng, block=block), truth, config, attack)


def _task(args):
    config_id, config, attack, trial, seed = args
    obs = run_trial(config, attack, seed)
    return ResultRow(config_id, config.n_users, config.batch_size, config.n_partners, attack,
                     config.defense, trial, seed, EXHAUSTED if obs is None else obs, obs is not None)


def run_sweep(grid: ExperimentGrid, master_seed: int, workers: int = 1, trials=None) -> list[ResultRow]:
    """All (config, attack, trial) experiments of ``grid``.

    ``trials`` restricts the run to a subset of trial indices; each row only
    depends on its own seed, so subsets reproduce the full run's rows.
    """
    trial_ids = range(grid.trials_per_config) if trials is None else sorted(trials)
    tasks = [
        (cid, cfg, attack, t, derive_seed(master_seed, cid, attack, t))
        for cid, cfg in enumerate(grid.configs())
        for attack in grid.attacks
        for t in trial_ids
    ]
    log.info("running %d trials on %d worker(s)", len(tasks), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_task, tasks, chunksize=4))
    else:
        rows = [_task(t) for t in tasks]
    order = {a: i for i, a in enumerate(grid.attacks)}
    return sorted(rows, key=lambda r: (r.config_id, order[r.attack], r.trial))


def summarize(rows) -> list[SummaryRow]:
    if not rows:
        raise ValueError("cannot summarize an empty result set")
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.config_id, r.N, r.b, r.m, r.attack, r.defense), []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[4], k[5])):
        group = groups[key]
        wins = [r.observations_used for r in group if r.succeeded]
        out.append(SummaryRow(
            *key,
            trials=len(group),
            success_rate=len(wins) / len(group),
            median_obs=float(statistics.median(wins)) if wins else None,
            mean_obs=statistics.fmean(wins) if wins else None,
        ))
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def write_csv(rows, path, kind: str | None = None):
    """Write raw or summary rows. ``kind`` is inferred from the first row;
    pass it explicitly for an empty list ("raw" by default)."""
    rows = list(rows)
    if kind is None:
        kind = "summary" if rows and isinstance(rows[0], SummaryRow) else "raw"
    header = SUMMARY_HEADER if kind == "summary" else RAW_HEADER
    names = header.split(",")
    lines = [header] + [",".join(_fmt(getattr(r, n)) for n in names) for r in rows]
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def _parse_bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ValueError(f"expected true/false, got {s!r}")
    return s == "true"


def read_csv(path) -> list:
    """Parse a file written by :func:`write_csv` back into rows."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    header, body = lines[0], lines[1:]
    if header == RAW_HEADER:
        out = []
        for line in body:
            c = line.split(",")
            out.append(ResultRow(int(c[0]), int(c[1]), int(c[2]), int(c[3]), c[4], c[5], int(c[6]),
                                 int(c[7]), int(c[8]), _parse_bool(c[9])))
        return out
    if header == SUMMARY_HEADER:
        opt = lambda s: float(s) if s else None  # noqa: E731
        return [
            SummaryRow(int(c[0]), int(c[1]), int(c[2]), int(c[3]), c[4], c[5], int(c[6]), float(c[7]),
                       opt(c[8]), opt(c[9]))
            for c in (line.split(",") for line in body)
        ]
    raise ValueError(f"{path}: unrecognised CSV header {header!r}")


GRID_KEYS = {"base", "sweep_parameter", "sweep_values", "trials_per_config", "attacks"}


def grid_from_dict(data: dict) -> ExperimentGrid:
    unknown = set(data) - GRID_KEYS
    if unknown:
        raise ValueError(f"unknown grid keys: {sorted(unknown)}")
    for key in ("sweep_parameter", "sweep_values"):
        if key not in data:
            raise ValueError(f"grid is missing {key!r}")
    base_fields = {f.name for f in dataclasses.fields(SystemConfig)}
    base = data.get("base", {})
    bad = set(base) - base_fields
    if bad:
        raise ValueError(f"unknown SystemConfig fields in base: {sorted(bad)}")
    return ExperimentGrid(
        base=SystemConfig(**base),
        sweep_parameter=data["sweep_parameter"],
        sweep_values=tuple(data["sweep_values"]),
        trials_per_config=data.get("trials_per_config", 100),
        attacks=tuple(data.get("attacks", ATTACKS)),
    )


def load_grid(path) -> ExperimentGrid:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    return grid_from_dict(data)


# -- traces ------------------------------------------------------------------

def write_trace(trace, path):
    with open(path, "w", newline="\n") as fh:
        for r in trace:
            fh.write(json.dumps({"round": r.round_index,
                                 "senders": sorted(r.senders.tolist()),
                                 "receivers": sorted(r.receivers.tolist())}) + "\n")


def read_trace(path, target: int) -> Trace:
    rounds = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rounds.append(make_round(rec["round"], rec["senders"], rec["receivers"], target))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trace record ({exc})") from exc
    return Trace(tuple(rounds))


def write_truth(truth: GroundTruth, path):
    data = {
        "n_users": truth.n_users,
        "target": truth.target,
        "target_partners": truth.partners_of(truth.target).tolist(),
        "target_weights": truth.weights_of(truth.target).tolist(),
        "pseudonyms": {str(p): truth.partners_of(p).tolist() for p in truth.pseudonyms},
    }
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")


def read_truth(path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    for key in ("n_users", "target", "target_partners"):
        if key not in data:
            raise ValueError(f"{path}: truth file lacks {key!r}")
    return data


# -- SG-Mix event logs --------------------------------------------------------

def write_event_log(event_log, path):
    with open(path, "w", newline="\n") as fh:
        for i, s, r, t0, t1 in zip(event_log.ids.tolist(), event_log.senders.tolist(),
                                   event_log.receivers.tolist(), event_log.send_times.tolist(),
                                   event_log.deliver_times.tolist()):
            fh.write(json.dumps({"id": i, "sender": s, "receiver": r, "sent": t0, "delivered": t1}) + "\n")


def read_event_log(path, horizon: float | None = None):
    from .sgmix import EventLog

    ids, senders, receivers, sent, delivered = [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            ids.append(rec["id"])
            senders.append(rec["sender"])
            receivers.append(rec["receiver"])
            sent.append(rec["sent"])
            delivered.append(rec["delivered"])
    sent_a = np.asarray(sent, dtype=float)
    order = np.argsort(sent_a, kind="stable")
    if horizon is None:
        horizon = float(sent_a.max()) if len(sent_a) else 0.0
    return EventLog(np.asarray(ids, dtype=np.int64)[order], np.asarray(senders, dtype=np.int64)[order],
                    np.asarray(receivers, dtype=np.int64)[order], sent_a[order],
                    np.asarray(delivered, dtype=float)[order], float(horizon))


def write_attacker_view(event_log, sends_path, deliveries_path):
    view = event_log.view
    with open(sends_path, "w", newline="\n") as fh:
        for u, t in zip(view.send_users.tolist(), view.send_times.tolist()):
            fh.write(json.dumps({"sender": u, "time": t}) + "\n")
    with open(deliveries_path, "w", newline="\n") as fh:
        for u, t in zip(view.deliver_users.tolist(), view.deliver_times.tolist()):
            fh.write(json.dumps({"receiver": u, "time": t}) + "\n")
