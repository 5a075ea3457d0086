"""Threshold-mix traffic generation, with optional Sybil pseudonym traffic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import GroundTruth, RoundRecord, SystemConfig

DEFAULT_BLOCK = 256


@dataclass(frozen=True)
class Trace:
    rounds: tuple
    config: SystemConfig | None = None

    def __post_init__(self):
        for expected, r in enumerate(self.rounds, start=1):
            if r.round_index != expected:
                raise ValueError(f"round indices must be consecutive from 1; got {r.round_index} at position {expected}")

    def __len__(self):
        return len(self.rounds)

    def __iter__(self):
        return iter(self.rounds)

    def __getitem__(self, round_index: int) -> RoundRecord:
        return self.rounds[round_index - 1]


def _check(config: SystemConfig, truth: GroundTruth):
    if config.n_users != truth.n_users:
        raise ValueError(f"config has N={config.n_users} but ground truth has N={truth.n_users}")
    if config.target != truth.target:
        raise ValueError("config and ground truth disagree on the target")


@dataclass(frozen=True)
class RoundBlock:
    """Consecutive rounds stored as flat arrays; round i owns slots
    ``offsets[i]:offsets[i + 1]``."""

    first_index: int
    senders: np.ndarray
    receivers: np.ndarray
    offsets: np.ndarray
    alice_counts: np.ndarray

    def __len__(self):
        return len(self.alice_counts)

    def round(self, i: int) -> RoundRecord:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        return RoundRecord(self.first_index + i, self.senders[lo:hi], self.receivers[lo:hi],
                           int(self.alice_counts[i]))

    def records(self) -> list[RoundRecord]:
        return [self.round(i) for i in range(len(self))]


def _draw_block(config: SystemConfig, truth: GroundTruth, rng: np.random.Generator,
                count: int, first_index: int) -> RoundBlock:
    n, b, target = config.n_users, config.batch_size, truth.target
    base = rng.integers(0, n, size=(count, b))
    if config.alice_rate > 0:
        forced = (rng.random(count) < config.alice_rate).astype(np.int64)
    else:
        forced = np.zeros(count, dtype=np.int64)
    alice = (base == target).sum(axis=1) + forced
    pseudonyms = np.asarray(truth.pseudonyms, dtype=np.int64) if config.defense == "sybil" else np.empty(0, np.int64)

    sizes = b + forced + len(pseudonyms) * alice
    offsets = np.zeros(count + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    senders = np.empty(offsets[-1], dtype=np.int64)
    if not forced.any() and (len(pseudonyms) == 0 or not alice.any()):
        senders[:] = base.ravel()
    else:
        for i in range(count):
            lo = offsets[i]
            senders[lo:lo + b] = base[i]
            pos = lo + b
            if forced[i]:
                senders[pos] = target
                pos += 1
            if len(pseudonyms) and alice[i]:
                # each pseudonym sends once per target message
                senders[pos:offsets[i + 1]] = np.repeat(pseudonyms, alice[i])
    receivers = truth.draw_receivers(senders, rng)

    return RoundBlock(first_index, senders, receivers, offsets, alice)


def generate_round(config: SystemConfig, truth: GroundTruth, rng: np.random.Generator,
                   round_index: int = 1) -> RoundRecord:
    """Simulate one flush: b senders drawn with replacement, one receiver each.

    With the Sybil defense on, every pseudonym adds one extra message per
    target message in the round.
    """
    _check(config, truth)
    return _draw_block(config, truth, rng, 1, round_index).round(0)


def iter_blocks(config: SystemConfig, truth: GroundTruth, rng: np.random.Generator,
                block: int = DEFAULT_BLOCK, start: int = 1) -> Iterator[RoundBlock]:
    """Endless lazy stream of round blocks."""
    _check(config, truth)
    index = start
    while True:
        yield _draw_block(config, truth, rng, block, index)
        index += block


def iter_rounds(config: SystemConfig, truth: GroundTruth, rng: np.random.Generator,
                block: int = DEFAULT_BLOCK, start: int = 1) -> Iterator[RoundRecord]:
    """Endless lazy stream of rounds; same rounds as :func:`iter_blocks`."""
    for blk in iter_blocks(config, truth, rng, block, start):
        yield from blk.records()


def generate_trace(config: SystemConfig, truth: GroundTruth, n_rounds: int,
                   rng: np.random.Generator, block: int = DEFAULT_BLOCK) -> Trace:
    if n_rounds < 1:
        raise ValueError(f"n_rounds must be >= 1, got {n_rounds}")
    _check(config, truth)
    rounds = []
    while len(rounds) < n_rounds:
        k = min(block, n_rounds - len(rounds))
        rounds.extend(_draw_block(config, truth, rng, k, len(rounds) + 1).records())
    return Trace(tuple(rounds), config)
