import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energyqueue.errors import BadThreshold, NegativeRate, NonScaledSpeed, TruncationTooSmall, Unstable
from energyqueue.model import (
    INF,
    Policy,
    ServerPhase,
    SystemParams,
    build_generator,
    phase_of,
    validate_params,
)

INF = math.inf


def params(lam=0.5, mu=1.0, c=2.0, gamma=1.0, p=(0.6, 4.0, 1.0, 4.0), beta=1.0):
    return SystemParams(lam, mu, c, gamma, *p, beta)


def test_validate_accepts_reference_example():
    v = validate_params(params(), Policy(1, 2, 1.0))
    assert v.policy == Policy(1, 2, 1.0)
    assert v.speed_tradeoff is True  # 4/2 > 1/1


def test_validate_rejects_unscaled_speed():
    with pytest.raises(NonScaledSpeed):
        validate_params(params(c=1.0), Policy(1, 2, 1.0))


def test_validate_rejects_unstable_fast_capacity():
    with pytest.raises(Unstable):
        validate_params(params(lam=2.5), Policy(1, 2, 1.0))


def test_validate_slow_only_needs_lambda_below_mu():
    validate_params(params(lam=1.5), Policy(1, 2, 0.0))
    with pytest.raises(Unstable):
        validate_params(params(lam=1.5), Policy(1, INF, 0.0))


@pytest.mark.parametrize("bad", [dict(mu=-1.0), dict(gamma=-0.1), dict(lam=-0.2)])
def test_validate_rejects_negative_rates(bad):
    with pytest.raises(NegativeRate):
        validate_params(params(**bad), Policy())


def test_validate_rejects_negative_alpha():
    with pytest.raises(NegativeRate):
        validate_params(params(), Policy(1, 2, -1.0))


@pytest.mark.parametrize("policy", [Policy(0, 2, 1.0), Policy(1, 0, 1.0)])
def test_validate_rejects_bad_thresholds(policy):
    with pytest.raises(BadThreshold):
        validate_params(params(), policy)


def test_never_off_policy_is_canonicalised():
    assert validate_params(params(), Policy(7, 3, 0.0)).policy == Policy(1, 3, 0.0)


def test_speed_tradeoff_flag_false_when_fast_is_cheaper_per_job():
    assert not params(p=(0.6, 1.5, 1.0, 1.5)).speed_tradeoff


def test_phase_examples():
    pol = Policy(3, 5, 1.0)
    assert phase_of(1, 0, pol) is ServerPhase.IDLE
    assert phase_of(0, 3, pol) is ServerPhase.SWITCHING
    assert phase_of(0, 2, pol) is ServerPhase.OFF
    assert phase_of(1, 5, pol) is ServerPhase.FAST
    assert phase_of(1, 4, pol) is ServerPhase.SLOW
    assert phase_of(1, 10**6, Policy(1, INF, 0.0)) is ServerPhase.SLOW


def test_never_off_slow_only_is_truncated_mm1():
    gen = build_generator(params(), Policy(1, INF, 0.0), 10)
    assert gen.dimension == 11
    dense = gen.matrix.toarray()
    for q in range(10):
        assert dense[q, q + 1] == 0.5
        assert dense[q + 1, q] == 1.0
    assert np.count_nonzero(dense - np.diag(np.diag(dense))) == 20


def test_instant_off_removes_idle_and_routes_last_departure_home():
    p = params()
    gen = build_generator(p, Policy(1, 1, INF), 3)
    states = set(zip(gen.s.tolist(), gen.q.tolist()))
    assert (1, 0) not in states
    edges = {(a, b): r for a, b, r in gen.entries()}
    assert edges[((1, 1), (0, 0))] == p.c * p.mu


def test_transition_list_for_finite_alpha():
    p = params(lam=0.4, gamma=0.7)
    pol = Policy(2, 3, 0.25)
    gen = build_generator(p, pol, 6)
    edges = {(a, b): r for a, b, r in gen.entries()}
    expected = {}
    for q in range(6):
        expected[((1, q), (1, q + 1))] = 0.4
        expected[((0, q), (0, q + 1))] = 0.4
    for q in range(1, 7):
        expected[((1, q), (1, q - 1))] = 2.0 if q >= 3 else 1.0
    for q in range(2, 7):
        expected[((0, q), (1, q))] = 0.7
    expected[((1, 0), (0, 0))] = 0.25
    assert edges == pytest.approx(expected)


def test_truncation_floor_enforced():
    with pytest.raises(TruncationTooSmall):
        build_generator(params(), Policy(4, 6, 1.0), 7)
    build_generator(params(), Policy(4, 6, 1.0), 8)


@pytest.mark.parametrize("alpha, extra", [(0.0, None), (0.5, 0), (INF, -1)])
def test_state_counts(alpha, extra):
    q_max, k1 = 12, 3
    gen = build_generator(params(), Policy(k1, 4, alpha), q_max)
    if extra is None:
        assert gen.dimension == q_max + 1
    else:
        assert gen.dimension == (q_max + 1) + k1 + (q_max - k1 + 1) + extra


policies = st.builds(
    Policy,
    k1=st.integers(1, 8),
    k2=st.one_of(st.integers(1, 10), st.just(INF)),
    alpha=st.sampled_from([0.0, 0.05, 1.0, 30.0, INF]),
)


@settings(max_examples=60, deadline=None)
@given(
    lam=st.floats(0.05, 0.95),
    c=st.floats(1.1, 4.0),
    gamma=st.floats(0.05, 10.0),
    policy=policies,
    extra=st.integers(0, 20),
)
def test_generator_structure(lam, c, gamma, policy, extra):
    p = params(lam=lam, c=c, gamma=gamma)
    policy = policy.canonical()
    q_max = max(policy.k1, 0 if policy.k2 == INF else policy.k2) + 2 + extra
    gen = build_generator(p, policy, q_max)
    row_sums = np.bincount(gen.rows, weights=gen.rates, minlength=gen.dimension)
    assert np.abs(row_sums).max() <= 1e-13
    for (s0, q0), (s1, q1), rate in gen.entries():
        assert rate >= 0
        assert abs(q1 - q0) <= 1
        if s0 == 1 and s1 == 1 and q1 == q0 - 1:
            ph = phase_of(1, q0, policy)
            assert rate == (p.c * p.mu if ph is ServerPhase.FAST else p.mu)
        if s0 == 0:
            # no service while off or switching
            assert q1 >= q0
