"""Performance, power and cost metrics derived from a stationary distribution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import INF, Policy, ServerPhase, SystemParams
from .solver import StationaryDistribution, Tolerances, solve_stationary


@dataclass(frozen=True)
class PolicyMetrics:
    mean_jobs: float
    mean_response: float
    mean_power: float
    cost: float
    phase_probs: dict = field(default_factory=dict)
    residual: float | None = None
    q_max: int | None = None
    tail_mass: float | None = None


def phase_probabilities(dist: StationaryDistribution, policy: Policy | None = None) -> dict:
    policy = policy or dist.policy
    s, q, p = dist.s, dist.q, dist.probs
    on = s == 1
    probs = {
        ServerPhase.OFF: float(p[~on & (q < policy.k1)].sum()),
        ServerPhase.SWITCHING: float(p[~on & (q >= policy.k1)].sum()) + dist.off_tail_mass,
        ServerPhase.IDLE: float(p[on & (q == 0)].sum()),
        ServerPhase.SLOW: float(p[on & (q >= 1) & (q < policy.k2)].sum()),
        ServerPhase.FAST: float(p[on & (q >= policy.k2)].sum()),
    }
    tail_phase = ServerPhase.SLOW if policy.k2 == INF else ServerPhase.FAST
    probs[tail_phase] += dist.on_tail_mass
    return probs


def mean_jobs(dist: StationaryDistribution) -> float:
    return float(np.dot(dist.q, dist.probs)) + dist.off_tail_moment + dist.on_tail_moment


def mean_response(dist: StationaryDistribution, params: SystemParams) -> float:
    return mean_jobs(dist) / params.lam


def mean_power(dist: StationaryDistribution, params: SystemParams, policy: Policy | None = None) -> float:
    phases = phase_probabilities(dist, policy)
    return (params.p_idle * phases[ServerPhase.IDLE]
            + params.p_setup * phases[ServerPhase.SWITCHING]
            + params.p_slow * phases[ServerPhase.SLOW]
            + params.p_fast * phases[ServerPhase.FAST])


def cost(mean_resp: float, mean_pow: float, params: SystemParams) -> float:
    return mean_resp + params.beta * mean_pow


def evaluate_policy(params: SystemParams, policy: Policy, tol: Tolerances = Tolerances()) -> PolicyMetrics:
    dist = solve_stationary(params, policy, tol)
    params, policy = dist.params, dist.policy
    n = mean_jobs(dist)
    r = n / params.lam
    phases = phase_probabilities(dist, policy)
    pw = mean_power(dist, params, policy)
    return PolicyMetrics(
        mean_jobs=float(n),
        mean_response=float(r),
        mean_power=float(pw),
        cost=float(cost(r, pw, params)),
        phase_probs={k: float(v) for k, v in phases.items()},
        residual=float(dist.residual),
        q_max=int(dist.q_max),
        tail_mass=float(dist.tail_mass_bound),
    )
