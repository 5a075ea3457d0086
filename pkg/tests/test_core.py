import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdalab.core import (
    GroundTruth,
    SystemConfig,
    build_true_vector,
    make_ground_truth,
    success_threshold,
    uniform_vector,
)


def _truth(n, target, partners, weights):
    p = [None] * n
    w = [None] * n
    p[target] = np.asarray(partners)
    w[target] = np.asarray(weights, dtype=float)
    return GroundTruth(n, target, tuple(p), tuple(w))


def test_true_vector_single_partner():
    v = build_true_vector(_truth(10, 0, [7], [1.0]), 0)
    assert v[7] == 1.0
    assert v.sum() == 1.0 and np.count_nonzero(v) == 1


def test_true_vector_paper_default_m():
    truth = make_ground_truth(SystemConfig(n_users=20000, n_partners=20, background="uniform"),
                              np.random.default_rng(0))
    v = build_true_vector(truth, truth.target)
    assert np.count_nonzero(v) == 20
    assert np.allclose(v[v > 0], 0.05)


def test_true_vector_weighted():
    v = build_true_vector(_truth(12, 1, [3, 9], [0.75, 0.25]), 1)
    assert v[3] == 0.75 and v[9] == 0.25
    assert np.count_nonzero(v) == 2


def test_true_vector_unknown_user():
    truth = _truth(4, 0, [1], [1.0])
    with pytest.raises(ValueError, match="not part of this ground truth"):
        build_true_vector(truth, 4)


@pytest.mark.parametrize("n, expected", [(1, [1.0]), (4, [0.25] * 4)])
def test_uniform_vector_small(n, expected):
    assert uniform_vector(n).tolist() == expected


def test_uniform_vector_paper_n():
    u = uniform_vector(20000)
    assert np.all(u == 5e-5)


def test_uniform_vector_rejects_zero():
    with pytest.raises(ValueError):
        uniform_vector(0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10**6))
def test_uniform_vector_sums_to_one(n):
    u = uniform_vector(n)
    assert np.all(u == u[0])
    assert abs(u.sum() - 1) < 1e-9


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 60), m=st.integers(1, 8), seed=st.integers(0, 2**32 - 1),
       weights=st.sampled_from(["uniform", "zipf"]), sybil=st.booleans())
def test_ground_truth_invariants(n, m, seed, weights, sybil):
    m = min(m, n - 1)
    cfg = SystemConfig(n_users=n, n_partners=m, batch_size=3, weights=weights,
                       defense="sybil" if sybil else "none", pseudonym_partners=max(1, m - 1))
    truth = make_ground_truth(cfg, np.random.default_rng(seed))
    assert len(truth.partners_of(truth.target)) == m
    for p in truth.pseudonyms:
        assert len(truth.partners_of(p)) == cfg.m_prime
        assert p != truth.target
    for u in range(n):
        p, w = truth.partners_of(u), truth.weights_of(u)
        assert len(set(p.tolist())) == len(p)
        assert p.min() >= 0 and p.max() < n
        assert u not in p.tolist()
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-9
        v = build_true_vector(truth, u)
        assert abs(v.sum() - 1) < 1e-9
        # nonzero entries are exactly the partner list
        assert set(np.flatnonzero(v).tolist()) == set(p.tolist())


def test_ground_truth_is_read_only():
    truth = make_ground_truth(SystemConfig(n_users=30, n_partners=4, batch_size=2), np.random.default_rng(1))
    with pytest.raises(ValueError):
        truth.partners[0][0] = 5


def test_background_partner_count_is_configurable():
    cfg = SystemConfig(n_users=50, n_partners=4, batch_size=2, background_partners=7)
    truth = make_ground_truth(cfg, np.random.default_rng(2))
    assert {len(truth.partners_of(u)) for u in range(1, 50)} == {7}


@pytest.mark.parametrize("kwargs", [
    dict(n_users=0), dict(n_partners=0), dict(n_users=5, n_partners=6), dict(batch_size=0),
    dict(obs_limit=0), dict(success_fraction=0), dict(success_fraction=1.2), dict(chebyshev_k=0),
    dict(defense="mixnet"), dict(alice_rate=1.5), dict(target=20000),
])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        SystemConfig(**kwargs)


@pytest.mark.parametrize("m, frac, need", [(20, 0.8, 16), (1, 0.8, 1), (5, 0.8, 4), (10, 0.8, 8), (3, 1.0, 3)])
def test_success_threshold(m, frac, need):
    assert success_threshold(m, frac) == need


def test_draw_receivers_follow_weights():
    truth = _truth(8, 0, [2, 5, 6], [0.5, 0.3, 0.2])
    rng = np.random.default_rng(3)
    draws = truth.draw_receivers(np.zeros(200_000, dtype=np.int64), rng)
    freq = np.bincount(draws, minlength=8) / len(draws)
    se = np.sqrt(np.array([0.5, 0.3, 0.2]) * (1 - np.array([0.5, 0.3, 0.2])) / len(draws))
    assert np.all(np.abs(freq[[2, 5, 6]] - [0.5, 0.3, 0.2]) < 4 * se)
    assert freq[[0, 1, 3, 4, 7]].sum() == 0
