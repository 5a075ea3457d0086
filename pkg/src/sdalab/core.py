"""Shared domain types: configuration, ground truth, rounds and behaviour vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

DEFENSES = ("none", "sybil")
BACKGROUNDS = ("partners", "uniform")
WEIGHT_MODES = ("uniform", "zipf")
ATTACKER_BATCH = ("nominal", "observed")
OBS_UNITS = ("alice_rounds", "rounds")


@dataclass(frozen=True)
class SystemConfig:
    """Parameters of one simulated mix system and of the attacker facing it.

    ``background`` selects how non-target users pick recipients: from a
    private partner set of ``background_partners`` users ("partners") or
    uniformly from all N users ("uniform", the classical SDA assumption).
    ``alice_rate`` > 0 adds the target as an extra sender to each round with
    that probability. ``attacker_batch`` chooses the scalar b used by the
    estimators: the configured batch size or the mean size of target rounds.
    ``obs_unit`` decides whether ``obs_limit`` counts target rounds or raw
    rounds.
    """

    n_users: int = 20000
    batch_size: int = 50
    n_partners: int = 20
    obs_limit: int = 5000
    success_fraction: float = 0.8
    chebyshev_k: float = 3.0
    rng_seed: int = 0
    defense: str = "none"
    n_pseudonyms: int = 1
    pseudonym_partners: int | None = None
    background_partners: int | None = None
    background: str = "partners"
    weights: str = "uniform"
    alice_rate: float = 0.0
    attacker_batch: str = "nominal"
    obs_unit: str = "alice_rounds"
    target: int = 0

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError(f"n_users must be >= 1, got {self.n_users}")
        if not 1 <= self.n_partners <= self.n_users:
            raise ValueError(f"n_partners must be in [1, n_users], got {self.n_partners}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.obs_limit < 1:
            raise ValueError(f"obs_limit must be >= 1, got {self.obs_limit}")
        if not 0 < self.success_fraction <= 1:
            raise ValueError(f"success_fraction must be in (0, 1], got {self.success_fraction}")
        if not self.chebyshev_k > 0:
            raise ValueError(f"chebyshev_k must be > 0, got {self.chebyshev_k}")
        if not 0 <= self.alice_rate <= 1:
            raise ValueError(f"alice_rate must be in [0, 1], got {self.alice_rate}")
        if not 0 <= self.target < self.n_users:
            raise ValueError(f"target must be in [0, n_users), got {self.target}")
        for name, value, allowed in (
            ("defense", self.defense, DEFENSES),
            ("background", self.background, BACKGROUNDS),
            ("weights", self.weights, WEIGHT_MODES),
            ("attacker_batch", self.attacker_batch, ATTACKER_BATCH),
            ("obs_unit", self.obs_unit, OBS_UNITS),
        ):
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")
        if self.defense == "sybil":
            if self.n_pseudonyms < 1:
                raise ValueError("sybil defense needs n_pseudonyms >= 1")
            if self.n_pseudonyms > self.n_users - 1:
                raise ValueError("not enough users to host the pseudonyms")
            if not 1 <= self.m_prime <= self.n_users:
                raise ValueError(f"pseudonym_partners must be in [1, n_users], got {self.m_prime}")
        if not 1 <= self.others_partners <= self.n_users:
            raise ValueError(
                f"background_partners must be in [1, n_users], got {self.others_partners}"
            )

    @property
    def m_prime(self) -> int:
        return self.n_partners if self.pseudonym_partners is None else self.pseudonym_partners

    @property
    def others_partners(self) -> int:
        return self.n_partners if self.background_partners is None else self.background_partners

    @property
    def active_pseudonyms(self) -> int:
        return self.n_pseudonyms if self.defense == "sybil" else 0

    @property
    def success_threshold(self) -> int:
        """Number of true partners the top-m ranking must contain."""
        return success_threshold(self.n_partners, self.success_fraction)


def success_threshold(m: int, fraction: float) -> int:
    # guard against 0.8 * 20 = 16.000000000000004 style rounding
    return math.ceil(round(fraction * m, 9))


@dataclass(frozen=True)
class GroundTruth:
    """Hidden communication pattern of every user.

    ``partners[u]`` is ``None`` for a user who picks recipients uniformly over
    all N users; otherwise it is the sorted array of that user's partners and
    ``weights[u]`` the matching probabilities.
    """

    n_users: int
    target: int
    partners: tuple
    weights: tuple
    pseudonyms: tuple = ()

    def __post_init__(self):
        if len(self.partners) != self.n_users or len(self.weights) != self.n_users:
            raise ValueError("partners/weights must have one entry per user")
        if not 0 <= self.target < self.n_users:
            raise ValueError(f"target {self.target} outside [0, {self.n_users})")
        for p in self.pseudonyms:
            if not 0 <= p < self.n_users or p == self.target:
                raise ValueError(f"invalid pseudonym id {p}")

    def check_user(self, user: int) -> int:
        user = int(user)
        if not 0 <= user < self.n_users:
            raise ValueError(f"user {user} is not part of this ground truth (N={self.n_users})")
        return user

    def partners_of(self, user: int) -> np.ndarray:
        p = self.partners[self.check_user(user)]
        return np.arange(self.n_users) if p is None else p

    def weights_of(self, user: int) -> np.ndarray:
        w = self.weights[self.check_user(user)]
        return np.full(self.n_users, 1.0 / self.n_users) if w is None else w

    @property
    def target_partners(self) -> frozenset:
        return frozenset(int(x) for x in self.partners_of(self.target))

    @cached_property
    def _sampler(self):
        width = max((len(p) for p in self.partners if p is not None), default=1)
        ids = np.zeros((self.n_users, width), dtype=np.int64)
        lengths = np.full(self.n_users, self.n_users, dtype=np.int64)
        skewed = np.zeros(self.n_users, dtype=bool)
        uniform_row = np.zeros(self.n_users, dtype=bool)
        cum_rows = {}
        for u, (p, w) in enumerate(zip(self.partners, self.weights)):
            if p is None:
                uniform_row[u] = True
                continue
            ids[u, : len(p)] = p
            lengths[u] = len(p)
            if np.any(w != w[0]):
                skewed[u] = True
                c = np.cumsum(w)
                c[-1] = 1.0
                cum_rows[u] = c
        # padding above 1 is never selected because draws are < 1
        cum = np.full((self.n_users, width), 2.0)
        for u, c in cum_rows.items():
            cum[u, : len(c)] = c
        return ids, lengths, skewed, uniform_row, cum

    def draw_receivers(self, senders: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One receiver per sender slot, drawn from that sender's distribution."""
        senders = np.asarray(senders, dtype=np.int64)
        ids, lengths, skewed, uniform_row, cum = self._sampler
        u = rng.random(len(senders))
        idx = np.minimum((u * lengths[senders]).astype(np.int64), lengths[senders] - 1)
        sk = skewed[senders]
        if sk.any():
            idx[sk] = (u[sk, None] >= cum[senders[sk]]).sum(axis=1)
        flat = uniform_row[senders]
        idx[flat] = 0
        out = ids[senders, idx]
        if flat.any():
            out[flat] = np.minimum((u[flat] * self.n_users).astype(np.int64), self.n_users - 1)
        return out


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _partner_weights(k: int, mode: str, rng: np.random.Generator) -> np.ndarray:
    if mode == "uniform":
        return np.full(k, 1.0 / k)
    w = 1.0 / np.arange(1, k + 1)
    w = rng.permutation(w / w.sum())
    return w


def _sample_partners(rng, n_users: int, k: int, exclude: int) -> np.ndarray:
    k = min(k, n_users - 1) if n_users > 1 else 1
    if n_users == 1:
        return np.zeros(1, dtype=np.int64)
    pick = rng.choice(n_users - 1, size=k, replace=False)
    pick[pick >= exclude] += 1
    return np.sort(pick).astype(np.int64)


def make_ground_truth(config: SystemConfig, rng: np.random.Generator) -> GroundTruth:
    """Draw partner sets and recipient weights for every user.

    Partner sets never contain their owner (except in the degenerate N=1
    system). The target's weights follow ``config.weights``; other users get
    uniform weights over their partners, or no partner set at all when
    ``config.background == "uniform"``.
    """
    n = config.n_users
    target = config.target
    others = [u for u in range(n) if u != target]
    pseudonyms = ()
    if config.active_pseudonyms:
        pseudonyms = tuple(int(x) for x in rng.choice(others, size=config.active_pseudonyms, replace=False))

    partners: list = [None] * n
    weights: list = [None] * n
    partners[target] = _sample_partners(rng, n, config.n_partners, target)
    weights[target] = _partner_weights(len(partners[target]), config.weights, rng)
    for p in pseudonyms:
        partners[p] = _sample_partners(rng, n, config.m_prime, p)
        weights[p] = _partner_weights(len(partners[p]), config.weights, rng)
    if config.background == "partners":
        k = config.others_partners
        special = {target, *pseudonyms}
        for u in range(n):
            if u in special:
                continue
            partners[u] = _sample_partners(rng, n, k, u)
            weights[u] = np.full(len(partners[u]), 1.0 / len(partners[u]))

    partners = tuple(None if p is None else _frozen(p) for p in partners)
    weights = tuple(None if w is None else _frozen(w) for w in weights)
    return GroundTruth(n, target, partners, weights, pseudonyms)


@dataclass(frozen=True, slots=True)
class RoundRecord:
    """The attacker's view of one mix flush, plus the target's share of it.

    Threshold-mix rounds have as many senders as receivers; rounds cut out of
    a continuous-time mix generally do not.
    """

    round_index: int
    senders: np.ndarray
    receivers: np.ndarray
    alice_count: int = 0

    @property
    def size(self) -> int:
        return len(self.receivers)


def make_round(round_index: int, senders, receivers, target: int) -> RoundRecord:
    senders = np.asarray(senders, dtype=np.int64)
    receivers = np.asarray(receivers, dtype=np.int64)
    return RoundRecord(round_index, senders, receivers, int(np.count_nonzero(senders == target)))


def build_true_vector(truth: GroundTruth, user: int) -> np.ndarray:
    """Exact recipient distribution of ``user`` as a length-N vector."""
    user = truth.check_user(user)
    if truth.partners[user] is None:
        return uniform_vector(truth.n_users)
    v = np.zeros(truth.n_users)
    np.add.at(v, truth.partners[user], truth.weights[user])
    return v


def uniform_vector(n_users: int) -> np.ndarray:
    if n_users < 1:
        raise ValueError(f"uniform_vector needs n_users >= 1, got {n_users}")
    return np.full(n_users, 1.0 / n_users)
