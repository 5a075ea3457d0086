"""Stop-and-go mix: M/M/inf simulation and the attacker's window construction.

The simulator keeps the hidden sender/receiver pairing in :class:`EventLog`.
Everything the attacker does goes through :class:`AttackerView`, which only
holds two unlinked streams: who sent when, and who received when.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import GroundTruth, RoundRecord
from .roundsim import Trace


@dataclass(frozen=True)
class MixEvent:
    message_id: int
    sender: int
    receiver: int
    send_time: float
    deliver_time: float

    @property
    def delay(self) -> float:
        return self.deliver_time - self.send_time


@dataclass(frozen=True)
class AttackerView:
    send_users: np.ndarray
    send_times: np.ndarray
    deliver_users: np.ndarray
    deliver_times: np.ndarray
    horizon: float


@dataclass(frozen=True)
class EventLog:
    """All messages of one run as parallel arrays sorted by send time."""

    ids: np.ndarray
    senders: np.ndarray
    receivers: np.ndarray
    send_times: np.ndarray
    deliver_times: np.ndarray
    horizon: float

    def __len__(self):
        return len(self.ids)

    @property
    def delays(self) -> np.ndarray:
        return self.deliver_times - self.send_times

    def events(self):
        for i in range(len(self)):
            yield MixEvent(int(self.ids[i]), int(self.senders[i]), int(self.receivers[i]),
                           float(self.send_times[i]), float(self.deliver_times[i]))

    @classmethod
    def from_events(cls, events, horizon: float) -> "EventLog":
        events = sorted(events, key=lambda e: (e.send_time, e.message_id))
        return cls(
            np.array([e.message_id for e in events], dtype=np.int64),
            np.array([e.sender for e in events], dtype=np.int64),
            np.array([e.receiver for e in events], dtype=np.int64),
            np.array([e.send_time for e in events], dtype=float),
            np.array([e.deliver_time for e in events], dtype=float),
            float(horizon),
        )

    @cached_property
    def view(self) -> AttackerView:
        order = np.argsort(self.deliver_times, kind="stable")
        return AttackerView(self.senders.copy(), self.send_times.copy(),
                            self.receivers[order], self.deliver_times[order], self.horizon)


def _view(log) -> AttackerView:
    return log.view if isinstance(log, EventLog) else log


def simulate_sgmix(truth: GroundTruth, lam: float, mu: float, horizon: float,
                   rng: np.random.Generator, target_rate: float | None = None,
                   delay_cap: float | None = None) -> EventLog:
    """Run one SG-Mix for ``horizon`` seconds.

    Arrivals total rate ``lam``: the target's share is a Poisson stream of
    rate ``target_rate`` (default ``lam / N``), the rest comes from uniformly
    chosen non-target users. The target holds any message back until her
    previous one has been delivered, so her realised rate is slightly lower. Every message is
    delayed by an independent Exponential(``mu``) time, optionally capped at
    ``delay_cap`` (test mode).
    """
    if not (lam > 0 and mu > 0 and horizon > 0):
        raise ValueError("lam, mu and horizon must all be positive")
    n, target = truth.n_users, truth.target
    if target_rate is None:
        target_rate = lam / n
    if n > 1 and not 0 <= target_rate < lam:
        raise ValueError(f"target_rate must be in [0, lam) when other users exist, got {target_rate}")

    count = rng.poisson((lam - target_rate) * horizon) if n > 1 else 0
    bg_times = np.sort(rng.uniform(0.0, horizon, size=count))
    bg_senders = rng.integers(0, n - 1, size=count) if n > 1 else np.empty(0, np.int64)
    bg_senders[bg_senders >= target] += 1
    bg_delays = rng.exponential(1.0 / mu, size=count)

    t_times, t_delays = [], []
    if target_rate > 0:
        candidate, busy_until = 0.0, 0.0
        while True:
            candidate += rng.exponential(1.0 / target_rate)
            send = max(candidate, busy_until)
            if send > horizon:
                break
            delay = rng.exponential(1.0 / mu)
            if delay_cap is not None:
                delay = min(delay, delay_cap)
            t_times.append(send)
            t_delays.append(delay)
            busy_until = send + delay
            candidate = send

    send_times = np.concatenate([bg_times, np.asarray(t_times, dtype=float)])
    senders = np.concatenate([bg_senders.astype(np.int64), np.full(len(t_times), target, dtype=np.int64)])
    delays = np.concatenate([bg_delays, np.asarray(t_delays, dtype=float)])
    if delay_cap is not None:
        delays = np.minimum(delays, delay_cap)
    order = np.argsort(send_times, kind="stable")
    send_times, senders, delays = send_times[order], senders[order], delays[order]
    receivers = truth.draw_receivers(senders, rng)
    return EventLog(np.arange(len(send_times), dtype=np.int64), senders, receivers,
                    send_times, send_times + delays, float(horizon))


def estimate_lambda(log) -> float:
    """Observed arrival rate: messages per unit time over the horizon."""
    view = _view(log)
    if view.horizon <= 0:
        raise ValueError("horizon must be positive")
    if len(view.send_times) == 0:
        raise ValueError("empty log: no traffic to analyze")
    return len(view.send_times) / view.horizon


def confidence_level(k: float) -> float:
    """One-sided Chebyshev lower bound on P(X <= E[X] + k*sigma)."""
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    return 1.0 - 1.0 / (1.0 + k * k)


def max_delay(mu_hat: float, k: float) -> float:
    """Delay the attacker treats as the maximum: mean plus k standard
    deviations of an Exponential(mu_hat) delay."""
    if not mu_hat > 0:
        raise ValueError(f"mu_hat must be positive, got {mu_hat}")
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    return (k + 1.0) / mu_hat


@dataclass(frozen=True)
class DelayModel:
    lambda_hat: float
    mu_hat: float
    k: float
    tau: float

    def __post_init__(self):
        if self.mu_hat > self.lambda_hat * (1 + 1e-12):
            raise ValueError(
                f"mu_hat={self.mu_hat} exceeds lambda_hat={self.lambda_hat}: the mix would run as a FIFO queue"
            )
        if self.tau != max_delay(self.mu_hat, self.k):
            raise ValueError("tau must equal (k + 1) / mu_hat")


def fit_delay_model(log, k: float, mu: float | None = None) -> DelayModel:
    """Attacker's delay model. Without ``mu`` the observed arrival rate stands
    in for the service rate, its upper bound."""
    lam = estimate_lambda(log)
    mu_hat = lam if mu is None else mu
    return DelayModel(lam, mu_hat, k, max_delay(mu_hat, k))


@dataclass(frozen=True)
class Window:
    users: np.ndarray
    times: np.ndarray

    def __len__(self):
        return len(self.users)


def _closed(times: np.ndarray, lo: float, hi: float) -> slice:
    return slice(int(np.searchsorted(times, lo, side="left")), int(np.searchsorted(times, hi, side="right")))


def receiver_window(log, t: float, tau: float) -> Window:
    """Deliveries in [t, t + tau]."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    view = _view(log)
    s = _closed(view.deliver_times, t, t + tau)
    return Window(view.deliver_users[s], view.deliver_times[s])


def sender_window(log, t: float, tau: float) -> Window:
    """Sends in [t - tau, t + tau]."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    view = _view(log)
    s = _closed(view.send_times, t - tau, t + tau)
    return Window(view.send_users[s], view.send_times[s])


@dataclass(frozen=True)
class VirtualRounds:
    trace: Trace
    effective_b: float
    model: DelayModel
    target_rounds: int
    background_rounds: int
    dropped_empty: int


def background_anchors(cloak_times: np.ndarray, target_times: np.ndarray, tau: float,
                       max_overlap: float = 0.5) -> np.ndarray:
    """Cloak-user send times usable as centres of target-free windows.

    An anchor is kept when no target send lies within ``tau`` of it and its
    window overlaps the previously kept one by at most ``max_overlap`` of the
    window length.
    """
    cloak_times = np.sort(cloak_times)
    if len(target_times):
        pos = np.searchsorted(target_times, cloak_times)
        left = target_times[np.clip(pos - 1, 0, None)]
        right = target_times[np.clip(pos, None, len(target_times) - 1)]
        near = (np.abs(cloak_times - left) <= tau) | (np.abs(right - cloak_times) <= tau)
        cloak_times = cloak_times[~near]
    min_gap = 2 * tau * (1 - max_overlap)
    kept = []
    last = -math.inf
    for t in cloak_times.tolist():
        if t - last >= min_gap:
            kept.append(t)
            last = t
    return np.asarray(kept, dtype=float)


def build_virtual_rounds(log, target: int, k: float, mu: float | None = None,
                         max_overlap: float = 0.5) -> VirtualRounds:
    """Cut the continuous log into rounds the threshold-mix attacks accept.

    One round per target send at time t: senders from [t - tau, t + tau],
    receivers from [t, t + tau]. Background rounds are built the same way
    around cloak-user sends that stay clear of every target window. Windows
    without any delivery carry no observation and are dropped. Rounds are
    numbered in order of their anchor time.
    """
    view = _view(log)
    model = fit_delay_model(view, k, mu)
    tau = model.tau
    target_times = view.send_times[view.send_users == target]
    if len(target_times) == 0:
        raise ValueError(f"target {target} never sent a message")

    anchors = []
    cloak = set()
    sizes = []
    for t in target_times.tolist():
        sw = sender_window(view, t, tau)
        sizes.append(len(sw))
        cloak.update(sw.users.tolist())
        anchors.append((t, 0, sw))
    cloak.discard(target)
    effective_b = float(np.mean(sizes))

    is_cloak = np.zeros(int(view.send_users.max()) + 1, dtype=bool)
    is_cloak[list(cloak)] = True
    cloak_times = view.send_times[is_cloak[view.send_users]]
    for t in background_anchors(cloak_times, target_times, tau, max_overlap).tolist():
        anchors.append((t, 1, None))
    anchors.sort(key=lambda a: (a[0], a[1]))

    rounds, n_target, n_bg, dropped = [], 0, 0, 0
    for t, kind, sw in anchors:
        rw = receiver_window(view, t, tau)
        if len(rw) == 0:
            dropped += 1
            continue
        if sw is None:
            sw = sender_window(view, t, tau)
        a = int(np.count_nonzero(sw.users == target))
        rounds.append(RoundRecord(len(rounds) + 1, sw.users, rw.users, a))
        if kind == 0:
            n_target += 1
        else:
            n_bg += 1
    return VirtualRounds(Trace(tuple(rounds)), effective_b, model, n_target, n_bg, dropped)


def virtualize_rounds(log, target: int, k: float, mu: float | None = None,
                      max_overlap: float = 0.5) -> tuple:
    """(trace, effective_b) for the window-based rounds of ``log``."""
    v = build_virtual_rounds(log, target, k, mu, max_overlap)
    return v.trace, v.effective_b


def attack_sgmix(log, truth: GroundTruth, k: float, attack: str = "improved", mu: float | None = None,
                 obs_limit: int = 5000, success_fraction: float = 0.8, max_overlap: float = 0.5):
    """Run a disclosure attack over the virtual rounds of ``log``.

    Returns ``(outcome, virtual_rounds)``; the outcome counts target windows
    consumed until the first successful evaluation.
    """
    from .attacks import run_until_success
    from .core import SystemConfig

    v = build_virtual_rounds(log, truth.target, k, mu, max_overlap)
    config = SystemConfig(n_users=truth.n_users, batch_size=1, n_partners=len(truth.target_partners),
                          obs_limit=obs_limit, success_fraction=success_fraction, chebyshev_k=k,
                          target=truth.target)
    outcome = run_until_success(v.trace, truth, config, attack, batch_size=v.effective_b)
    return outcome, v
