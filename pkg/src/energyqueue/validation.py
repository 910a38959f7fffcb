"""Invariant checks shared by ``energyqueue validate`` and the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import evaluate_policy, phase_probabilities
from .model import INF, Policy, ServerPhase, SystemParams, build_generator
from .sim import cross_validate
from .solver import StationaryDistribution, Tolerances, closed_form_oracle, solve_stationary


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def balance_errors(dist: StationaryDistribution) -> dict:
    """Errors of the structural identities a correct stationary law must satisfy.

    ``residual`` is measured on the truncated chain; the others use the
    tail-completed distribution.  Identities that do not apply to the
    policy are reported as ``None``.
    """
    params, policy = dist.params, dist.policy
    phases = phase_probabilities(dist)
    on = dist.line(1)
    lam, mu, fast = params.lam, params.mu, params.fast_rate

    q = np.arange(dist.q_max + 1)
    served = np.where(q >= policy.k2, fast, mu) * on
    served[0] = 0.0
    top = fast if policy.k2 != INF else mu
    throughput = served.sum() + top * dist.on_tail_mass

    out = {
        "residual": dist.residual,
        "mass": abs(dist.total_mass - 1.0),
        "min_prob": float(dist.probs.min()),
        "throughput": _rel(throughput, lam),
        "cut": None,
        "off_ratio": None,
    }
    if 0 < policy.alpha < INF:
        out["cut"] = _rel(params.gamma * phases[ServerPhase.SWITCHING], policy.alpha * dist.prob(1, 0))
    if policy.alpha > 0:
        off = dist.line(0)
        ks = np.arange(policy.k1, dist.q_max)
        ratios = off[ks + 1] / off[ks]
        out["off_ratio"] = float(np.max(np.abs(ratios / dist.tail_ratio_off - 1)))
    return out


def balance_ok(errors: dict, tol: Tolerances = Tolerances()) -> bool:
    rel = tol.oracle
    return (
        errors["residual"] <= tol.residual
        and errors["mass"] <= 1e-10
        and errors["min_prob"] >= 0
        and errors["throughput"] <= rel
        and (errors["cut"] is None or errors["cut"] <= rel)
        and (errors["off_ratio"] is None or errors["off_ratio"] <= rel)
    )


def row_sum_error(params: SystemParams, policy: Policy, q_max: int) -> float:
    gen = build_generator(params, policy, q_max)
    return float(np.abs(np.bincount(gen.rows, weights=gen.rates, minlength=gen.dimension)).max())


REDUCTIONS = (Policy(1, INF, 0.0), Policy(1, 1, 0.0), Policy(1, INF, INF))
CANNED_COMBINED = (Policy(3, 4, 0.5), 0.6)


def run_suite(cfg) -> list[CheckResult]:
    tol = cfg.tolerances
    base = cfg.params.at(0.5 * cfg.params.resolved().mu)
    results = []

    for frac in (0.25, 0.5, 0.75):
        params = cfg.params.at(frac * base.mu)
        for policy in REDUCTIONS:
            m = evaluate_policy(params, policy, tol)
            exact = closed_form_oracle(params, policy)
            err = _rel(m.mean_response, exact.mean_response)
            results.append(CheckResult(f"oracle {policy} rho={frac:g}", err <= tol.oracle,
                                       f"relative E[R] error {err:.3e}"))

    probes = [Policy(1, INF, 0.0), Policy(2, 3, 0.5), Policy(3, 1, INF), Policy(4, 6, 0.1), Policy(1, 2, 5.0)]
    for policy in probes:
        params = cfg.params.at(0.6 * base.mu)
        dist = solve_stationary(params, policy, tol)
        errors = balance_errors(dist)
        rows = row_sum_error(params, policy, dist.q_max)
        ok = balance_ok(errors, tol) and rows <= 1e-13
        detail = "; ".join(f"{k}={v:.2e}" for k, v in errors.items() if v is not None) + f"; row_sum={rows:.1e}"
        results.append(CheckResult(f"balance {policy}", ok, detail))

    sc = cfg.sim
    cases = [
        (Policy(1, INF, 0.0), 0.5 * base.mu),
        (Policy(1, INF, INF), 0.25 * base.mu),
        (CANNED_COMBINED[0], CANNED_COMBINED[1] * base.mu),
    ]
    for i, (policy, lam) in enumerate(cases):
        cv = cross_validate(cfg.params.at(lam), policy, tol, horizon=sc.horizon, seed=sc.seed + i,
                            batches=sc.batches)
        results.append(CheckResult(
            f"simulation {policy} lambda={lam:g}", cv.passed,
            f"E[R] {cv.analytic_response:.6g} vs {cv.sim_response:.6g}±{cv.sim_response_hw:.3g}; "
            f"E[P] {cv.analytic_power:.6g} vs {cv.sim_power:.6g}±{cv.sim_power_hw:.3g}",
        ))
    return results
