"""Standard and cloak-user (improved) statistical disclosure attacks.

Both attacks are driven by :class:`DisclosureState`, an accumulator that
ingests rounds one at a time and keeps integer receiver counts, so an
estimate after t rounds is the same whether the rounds arrived as a batch or
as a stream.

Observation vectors of a round are normalised by that round's own message
count. For plain threshold rounds that is exactly b; rounds inflated by the
Sybil defense or by a forced target slot stay unit-sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import GroundTruth, RoundRecord, SystemConfig, success_threshold, uniform_vector
from .roundsim import RoundBlock

ATTACKS = ("standard", "improved")


class NoTargetRounds(ValueError):
    """The target has not sent in any observed round."""


class NoBackgroundRounds(ValueError):
    """No target-free round contains a cloak user, so cloak behaviour is unknown."""


@dataclass(frozen=True)
class RoundPartition:
    with_target: tuple
    without_target: tuple


@dataclass(frozen=True)
class TargetEstimate:
    estimate: np.ndarray
    ranked_partners: list
    observations_used: int


def observation_vector(round: RoundRecord, batch_size, n_users: int) -> np.ndarray:
    """Each received message counts 1/batch_size towards its receiver."""
    if batch_size <= 0:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if len(round.receivers) == 0:
        raise ValueError(f"round {round.round_index} has no receivers")
    return np.bincount(round.receivers, minlength=n_users) / batch_size


def partition_rounds(trace, target: int) -> RoundPartition:
    with_t, without_t = [], []
    for r in trace:
        (with_t if np.any(r.senders == target) else without_t).append(r.round_index)
    return RoundPartition(tuple(with_t), tuple(without_t))


def cloak_set(trace, partition: RoundPartition, target: int) -> frozenset:
    """Users who shared at least one round with the target."""
    users = set()
    for i in partition.with_target:
        users.update(trace[i].senders.tolist())
    users.discard(target)
    return frozenset(users)


def background_rounds(trace, partition: RoundPartition, cloak) -> list:
    """Target-free rounds in which at least one cloak user sent."""
    if not cloak:
        return []
    cloak = set(cloak)
    return [j for j in partition.without_target if not cloak.isdisjoint(trace[j].senders.tolist())]


def cloak_estimate(trace, background, n_users: int, batch_size=None) -> np.ndarray:
    """Mean observation vector over ``background`` rounds.

    ``batch_size=None`` normalises each round by its own size.
    """
    if len(background) == 0:
        raise NoBackgroundRounds("no background rounds: the improved attack needs target-free rounds with cloak users")
    total = np.zeros(n_users)
    for j in background:
        r = trace[j]
        total += observation_vector(r, r.size if batch_size is None else batch_size, n_users)
    return total / len(background)


def mean_alice_share(trace, partition: RoundPartition, target: int) -> float:
    if not partition.with_target:
        raise NoTargetRounds("target never sent: cannot average her share")
    return sum(int(np.count_nonzero(trace[i].senders == target)) for i in partition.with_target) / len(
        partition.with_target
    )


def rank_partners(estimate, m: int) -> list:
    """Top ``m`` user ids by estimate, ties broken by ascending id."""
    est = np.asarray(estimate, dtype=float)
    n = len(est)
    if not 0 <= m <= n:
        raise ValueError(f"m must be in [0, {n}], got {m}")
    if m == 0:
        return []
    if m == n:
        sel = np.arange(n)
    else:
        kth = np.partition(est, n - m)[n - m]
        above = np.flatnonzero(est > kth)
        ties = np.flatnonzero(est == kth)[: m - len(above)]
        sel = np.concatenate([above, ties])
    return sel[np.lexsort((sel, -est[sel]))].tolist()


def evaluate_success(ranked, true_partners, success_fraction: float) -> bool:
    m = len(true_partners)
    hits = len(set(ranked) & set(true_partners))
    return hits >= success_threshold(m, success_fraction)


class DisclosureState:
    """Incremental sufficient statistics for both attacks.

    ``batch_size`` is the scalar b of the estimators; pass ``None`` to use
    the mean size of the target's rounds instead.
    """

    def __init__(self, n_users: int, target: int, batch_size=None, track_background: bool = True):
        self.n_users = n_users
        self.target = target
        self.batch_size = batch_size
        self.track_background = track_background
        self.rounds_seen = 0
        self.target_rounds = 0
        self.target_messages = 0
        self.target_round_sizes = 0
        self.background_count = 0
        self.cloak = np.zeros(n_users, dtype=bool)
        self._g_buf: dict = {}
        self._g_counts: dict = {}
        self._p_buf: dict = {}
        self._p_counts: dict = {}
        self._pending: list = []

    def add(self, rnd: RoundRecord) -> bool:
        """Ingest one round; returns True if the target sent in it."""
        self.rounds_seen += 1
        senders = rnd.senders
        a = int(np.count_nonzero(senders == self.target))
        if a:
            self._add_target(senders, rnd.receivers, a)
            return True
        if self.track_background:
            if self.cloak[senders].any():
                self._to_background(rnd.receivers)
            else:
                self._pending.append((senders, rnd.receivers))
        return False

    def add_block(self, block: RoundBlock, limit: int | None = None):
        """Ingest the first ``limit`` rounds of a block, yielding after each
        target round so the caller can evaluate at exactly that point."""
        n = len(block) if limit is None else min(len(block), limit)
        hits = np.flatnonzero(block.alice_counts[:n] > 0).tolist()
        offs = block.offsets
        start = 0
        for i in hits + [n]:
            if i > start:
                self._add_background_span(block, start, i)
            if i == n:
                break
            lo, hi = offs[i], offs[i + 1]
            self.rounds_seen += 1
            self._add_target(block.senders[lo:hi], block.receivers[lo:hi], int(block.alice_counts[i]))
            yield
            start = i + 1

    def _add_target(self, senders, receivers, a: int):
        self.target_rounds += 1
        self.target_messages += a
        self.target_round_sizes += len(receivers)
        self._g_buf.setdefault(len(receivers), []).append(receivers)
        if self.track_background:
            fresh = senders[~self.cloak[senders]]
            fresh = fresh[fresh != self.target]
            if fresh.size:
                self.cloak[fresh] = True
                self._promote_pending()

    def _add_background_span(self, block: RoundBlock, i0: int, i1: int):
        self.rounds_seen += i1 - i0
        if not self.track_background:
            return
        offs = block.offsets
        lo, hi = offs[i0], offs[i1]
        senders, receivers = block.senders[lo:hi], block.receivers[lo:hi]
        starts = offs[i0:i1] - lo
        sizes = np.diff(offs[i0:i1 + 1])
        hit = np.logical_or.reduceat(self.cloak[senders], starts)
        if hit.any():
            slot_hit = np.repeat(hit, sizes)
            for size in np.unique(sizes[hit]).tolist():
                sel = slot_hit & np.repeat(sizes == size, sizes)
                self._p_buf.setdefault(size, []).append(receivers[sel])
            self.background_count += int(hit.sum())
        for j in np.flatnonzero(~hit).tolist():
            a, z = starts[j], starts[j] + sizes[j]
            self._pending.append((senders[a:z], receivers[a:z]))

    def extend(self, rounds: Iterable[RoundRecord]):
        for r in rounds:
            self.add(r)
        return self

    def _to_background(self, receivers):
        self.background_count += 1
        self._p_buf.setdefault(len(receivers), []).append(receivers)

    def _promote_pending(self):
        keep = []
        for senders, receivers in self._pending:
            if self.cloak[senders].any():
                self._to_background(receivers)
            else:
                keep.append((senders, receivers))
        self._pending = keep

    def _mean_sum(self, buf: dict, counts: dict) -> np.ndarray:
        # sum over rounds of counts/size, grouped by size
        for size, arrays in buf.items():
            add = np.bincount(np.concatenate(arrays), minlength=self.n_users)
            if size in counts:
                counts[size] += add
            else:
                counts[size] = add
        buf.clear()
        total = np.zeros(self.n_users)
        for size in sorted(counts):
            total += counts[size] / size
        return total

    @property
    def b(self) -> float:
        if self.batch_size is not None:
            return self.batch_size
        return self.target_round_sizes / self.target_rounds

    @property
    def mean_share(self) -> float:
        return self.target_messages / self.target_rounds

    def target_sum(self) -> np.ndarray:
        return self._mean_sum(self._g_buf, self._g_counts)

    def cloak_behaviour(self) -> np.ndarray:
        if self.background_count == 0:
            raise NoBackgroundRounds(
                "no background rounds: the improved attack needs target-free rounds with cloak users"
            )
        return self._mean_sum(self._p_buf, self._p_counts) / self.background_count

    def standard(self) -> np.ndarray:
        if self.target_rounds == 0:
            raise NoTargetRounds("no target rounds observed")
        b = self.b
        mean_obs = self.target_sum() / self.target_rounds
        return b * mean_obs - (b - 1) * uniform_vector(self.n_users)

    def improved(self) -> np.ndarray:
        if self.target_rounds == 0:
            raise NoTargetRounds("no target rounds observed")
        cloak = self.cloak_behaviour()
        b, a = self.b, self.mean_share
        return (b / (a * self.target_rounds)) * self.target_sum() - ((b - a) / a) * cloak

    def estimate(self, attack: str) -> np.ndarray:
        if attack == "standard":
            return self.standard()
        if attack == "improved":
            return self.improved()
        raise ValueError(f"unknown attack {attack!r}; expected one of {ATTACKS}")


def _attacker_b(config: SystemConfig):
    return None if config.attacker_batch == "observed" else config.batch_size


def _run(trace, target: int, config: SystemConfig, attack: str) -> TargetEstimate:
    state = DisclosureState(config.n_users, target, _attacker_b(config), track_background=attack == "improved")
    state.extend(trace)
    est = state.estimate(attack)
    return TargetEstimate(est, rank_partners(est, config.n_partners), state.target_rounds)


def standard_sda(trace, target: int, config: SystemConfig) -> TargetEstimate:
    """b * mean(target-round observations) - (b - 1) * uniform."""
    return _run(trace, target, config, "standard")


def improved_sda(trace, target: int, config: SystemConfig) -> TargetEstimate:
    """Replace the uniform background of the standard attack by the mean
    observation of target-free rounds that contain cloak users, and weight by
    the target's mean share of messages per round."""
    return _run(trace, target, config, "improved")


@dataclass(frozen=True)
class AttackOutcome:
    observations: int | None
    rounds_consumed: int
    estimate: TargetEstimate | None

    @property
    def succeeded(self) -> bool:
        return self.observations is not None


def run_until_success(stream: Iterable, truth: GroundTruth, config: SystemConfig,
                      attack: str, target: int | None = None, true_partners=None,
                      batch_size: float | None = None) -> AttackOutcome:
    """Feed rounds until the attack reveals enough partners or the budget runs out.

    ``stream`` yields :class:`RoundRecord` or :class:`RoundBlock` items. The attack is re-evaluated after every round in which the target sends.
    ``estimate`` holds the last evaluated estimate (at success, or the final
    one before exhaustion). ``batch_size`` overrides the b the attacker plugs
    into the estimators.
    """
    if attack not in ATTACKS:
        raise ValueError(f"unknown attack {attack!r}; expected one of {ATTACKS}")
    target = truth.target if target is None else target
    partners = truth.target_partners if true_partners is None else frozenset(true_partners)
    m = len(partners)
    need = success_threshold(m, config.success_fraction)
    count_raw = config.obs_unit == "rounds"
    b = _attacker_b(config) if batch_size is None else batch_size
    state = DisclosureState(config.n_users, target, b, track_background=attack == "improved")
    last = None

    def evaluate():
        nonlocal last
        try:
            est = state.estimate(attack)
        except NoBackgroundRounds:
            return False
        ranked = rank_partners(est, m)
        last = TargetEstimate(est, ranked, state.target_rounds)
        return len(partners.intersection(ranked)) >= need

    def spent():
        if count_raw:
            return state.rounds_seen >= config.obs_limit
        return state.target_rounds >= config.obs_limit

    for item in stream:
        if isinstance(item, RoundBlock):
            limit = config.obs_limit - state.rounds_seen if count_raw else None
            for _ in state.add_block(item, limit):
                if evaluate():
                    return AttackOutcome(state.target_rounds, state.rounds_seen, last)
                if spent():
                    break
        elif state.add(item) and evaluate():
            return AttackOutcome(state.target_rounds, state.rounds_seen, last)
        if spent():
            break
    return AttackOutcome(None, state.rounds_seen, last)


def required_observations(stream: Iterable, truth: GroundTruth, config: SystemConfig,
                          attack: str) -> int | None:
    """Target rounds needed for first success, or ``None`` when exhausted."""
    return run_until_success(stream, truth, config, attack).observations
