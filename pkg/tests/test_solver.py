import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energyqueue.errors import NearlyUnstable, Unstable
from energyqueue.metrics import mean_jobs
from energyqueue.model import INF, Policy, SystemParams, build_generator
from energyqueue.solver import (
    Tolerances,
    _solve_truncated,
    adaptive_truncation,
    closed_form_oracle,
    solve_stationary,
    tail_ratio_off,
)
from energyqueue.validation import balance_errors, balance_ok

from oracles import dense_null_vector, recursion_law, smallest_truncation


def sp(lam=0.5, mu=1.0, c=2.0, gamma=0.5, beta=0.5):
    return SystemParams(lam, mu, c, gamma, 0.6, 4.0, 1.0, 4.0, beta)


@pytest.mark.parametrize("lam, gamma, expected", [(1.0, 1.0, 0.5), (0.25, 0.75, 0.25)])
def test_tail_ratio_off(lam, gamma, expected):
    assert tail_ratio_off(sp(lam=lam, gamma=gamma)) == pytest.approx(expected, abs=0, rel=1e-15)


def test_adaptive_truncation_light_load():
    q = adaptive_truncation(sp(lam=0.5), Policy(1, 1, 0.0), 1e-12)
    # (0.25)**(q - 1) / 0.75 < 1e-12 first holds at q = 22
    assert q == smallest_truncation(0.25, 1, 8, 1e-12) == 22
    assert q >= 21


def test_adaptive_truncation_degenerate_tolerance_returns_floor():
    assert adaptive_truncation(sp(lam=0.5), Policy(1, 1, 0.0), 1.0) == 8
    assert adaptive_truncation(sp(lam=0.5), Policy(1, 3, 0.0), 1.0) == 8


def test_adaptive_truncation_near_capacity():
    p = SystemParams(0.99, 0.5, 2.0, 0.5, 0.6, 4.0, 1.0, 4.0, 0.5)
    q = adaptive_truncation(p, Policy(1, 1, 0.0), 1e-12)
    assert q == smallest_truncation(0.99, 1, 8, 1e-12)
    assert q >= 2700


def test_adaptive_truncation_uses_off_ratio_when_dominant():
    # lam/(lam+gamma) = 0.5/0.6 dominates lam/(c mu) = 0.25
    p = sp(lam=0.5, gamma=0.1)
    q = adaptive_truncation(p, Policy(2, 3, 1.0), 1e-12)
    assert q == smallest_truncation(0.5 / 0.6, 3, 8, 1e-12)


def test_refuses_load_at_capacity_edge():
    with pytest.raises(NearlyUnstable):
        solve_stationary(sp(lam=1 - 1e-7), Policy(1, INF, 0.0))
    assert issubclass(NearlyUnstable, Unstable)


def test_mm1_slow_geometric():
    dist = solve_stationary(sp(lam=0.5), Policy(1, INF, 0.0))
    q = np.arange(21)
    exact = 0.5 * 0.5**q
    assert np.abs(dist.line(1)[:21] - exact).max() <= 1e-10


def test_mm1_fast_geometric():
    dist = solve_stationary(sp(lam=1.0), Policy(1, 1, 0.0))
    q = np.arange(21)
    assert np.abs(dist.line(1)[:21] - 0.5 ** (q + 1)).max() <= 1e-10


def test_setup_reduction_flow_balance():
    p = SystemParams(0.25, 1.0, 2.0, 0.5, 0.6, 4.0, 1.0, 4.0, 0.5)
    dist = solve_stationary(p, Policy(1, INF, INF))
    off = dist.line(0)
    turn_ons = p.gamma * (off[1:].sum() + dist.off_tail_mass)
    turn_offs = p.mu * dist.prob(1, 1)
    assert turn_ons == pytest.approx(turn_offs, rel=1e-10)


def test_truncated_solve_matches_dense_null_vector():
    p = sp(lam=0.7, gamma=0.3)
    for policy in [Policy(2, 3, 0.5), Policy(1, 1, INF), Policy(1, 4, 0.0)]:
        gen = build_generator(p, policy, 12)
        assert np.abs(_solve_truncated(gen) - dense_null_vector(gen.matrix)).max() <= 1e-12


policies = st.builds(
    Policy,
    k1=st.integers(1, 6),
    k2=st.one_of(st.integers(1, 8), st.just(INF)),
    alpha=st.sampled_from([0.0, 0.01, 0.3, 2.0, 50.0, INF]),
)


@settings(max_examples=60, deadline=None)
@given(lam_frac=st.floats(0.05, 0.95), c=st.floats(1.2, 3.0), gamma=st.floats(0.1, 5.0), policy=policies)
def test_matches_recursion_oracle(lam_frac, c, gamma, policy):
    policy = policy.canonical()
    top = c if policy.k2 != INF else 1.0
    p = sp(lam=lam_frac * top, c=c, gamma=gamma)
    dist = solve_stationary(p, policy)

    rho = max(p.lam / top, p.lam / (p.lam + gamma))
    levels = int(math.log(1e-20) / math.log(rho)) + 40
    on, off = recursion_law(p.lam, 1.0, c, gamma, policy.k1, policy.k2, policy.alpha, levels)
    n = dist.q_max + 1
    assert np.abs(dist.line(1) - on[:n]).max() <= 1e-10
    if policy.alpha > 0:
        assert np.abs(dist.line(0) - off[:n]).max() <= 1e-10
    q = np.arange(levels + 1)
    assert mean_jobs(dist) == pytest.approx(float(q @ (on + off)), rel=1e-9)
    assert balance_ok(balance_errors(dist))


@pytest.mark.parametrize("policy", [Policy(3, 4, 0.5), Policy(1, 2, INF), Policy(2, INF, 0.2)])
def test_truncation_insensitivity(policy):
    p = sp(lam=0.6, gamma=0.4)
    base = solve_stationary(p, policy)
    doubled = solve_stationary(p, policy, q_max=2 * base.q_max)
    assert abs(mean_jobs(base) - mean_jobs(doubled)) < Tolerances().mass * base.q_max


def test_tail_mass_reconstructed_even_when_truncation_is_short():
    # a deliberately short truncation still gives the exact law thanks to the tail closed forms
    p = sp(lam=0.6, gamma=0.4)
    policy = Policy(3, 4, 0.5)
    loose = Tolerances(mass=1.0)
    short = solve_stationary(p, policy, loose, q_max=8)
    full = solve_stationary(p, policy)
    assert short.tail_mass_bound > 1e-3
    assert mean_jobs(short) == pytest.approx(mean_jobs(full), rel=1e-10)
    assert short.total_mass == pytest.approx(1.0, abs=1e-12)


def test_on_line_ratio_matches_fast_service_ratio():
    p = sp(lam=0.5, gamma=10.0)  # lam/(c mu) = 0.25 dominates lam/(lam+gamma)
    dist = solve_stationary(p, Policy(2, 3, 1.0))
    on = dist.line(1)
    # levels 12..16 carry ~1e-9 mass: far above round-off, far into the tail
    fitted = on[13:18] / on[12:17]
    assert dist.tail_ratio_on == 0.25
    assert np.abs(fitted - 0.25).max() <= 1e-6


def test_off_tail_ratio_exact_up_to_last_level():
    p = sp(lam=0.3, gamma=0.2)
    dist = solve_stationary(p, Policy(2, 5, 0.7))
    off = dist.line(0)
    k = np.arange(2, dist.q_max)
    np.testing.assert_allclose(off[k + 1] / off[k], 0.3 / 0.5, rtol=1e-8)


def test_round_off_negatives_are_clipped_and_counted():
    # long heavy tail: some tail states come out at -1e-16-ish from the direct solve
    p = sp(lam=0.9, gamma=0.05)
    policy = Policy(5, 12, 0.01)
    dist = solve_stationary(p, policy)
    assert dist.probs.min() >= 0
    gen = build_generator(p, policy, dist.q_max)
    raw = _solve_truncated(gen)
    assert dist.clipped == np.count_nonzero(raw < 0)
    assert raw.min() >= -1e-12


def test_well_conditioned_instance_needs_no_clipping():
    assert solve_stationary(sp(lam=0.5, gamma=1.0), Policy(2, 3, 0.5)).clipped == 0


def test_closed_form_oracle_values():
    assert closed_form_oracle(sp(lam=0.5), Policy(1, INF, 0.0)).mean_response == pytest.approx(2.0, rel=1e-15)
    assert closed_form_oracle(sp(lam=1.0), Policy(1, 1, 0.0)).mean_response == pytest.approx(1.0, rel=1e-15)
    setup = closed_form_oracle(sp(lam=0.25, gamma=0.5), Policy(1, INF, INF))
    assert setup.mean_response == pytest.approx(1 / 0.75 + 2, rel=1e-15)
    assert closed_form_oracle(sp(), Policy(3, 4, 0.5)) is None
    assert closed_form_oracle(sp(), Policy(2, INF, INF)) is None
