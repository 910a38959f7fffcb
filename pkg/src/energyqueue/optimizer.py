"""Exhaustive policy search, regime classification, threshold location and
mechanism-synergy measurement."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import EmptyFeasibleSet, PreferenceViolated, Unstable
from .metrics import PolicyMetrics, evaluate_policy
from .model import INF, Policy, SystemParams
from .solver import Tolerances

log = logging.getLogger(__name__)

DEFAULT_ALPHA_GRID = (0.0, 1e-2, 1e-1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, INF)
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class SearchSpace:
    k1_max: int = 10
    k2_max: int = 20
    alpha_grid: tuple = DEFAULT_ALPHA_GRID

    def __post_init__(self):
        if self.k1_max < 1 or self.k2_max < 1 or not self.alpha_grid:
            raise ValueError("search space must be non-empty with k1_max, k2_max >= 1")
        grid = tuple(sorted(float(a) for a in self.alpha_grid))
        if grid[0] < 0:
            raise ValueError("alpha values must be non-negative")
        object.__setattr__(self, "alpha_grid", grid)

    def policies(self) -> list[Policy]:
        """Canonical, de-duplicated policies (k1 is only varied when alpha > 0)."""
        out = []
        for alpha in self.alpha_grid:
            k1s = [1] if alpha == 0 else range(1, self.k1_max + 1)
            for k1 in k1s:
                for k2 in [*range(1, self.k2_max + 1), INF]:
                    out.append(Policy(k1, k2, alpha))
        return out


class Regime(enum.Enum):
    FAST_ONLY_ALWAYS_ON = "FastOnlyAlwaysOn"
    BOTH_SPEEDS_ALWAYS_ON = "BothSpeedsAlwaysOn"
    SLOW_ONLY_ALWAYS_ON = "SlowOnlyAlwaysOn"
    SLOW_ONLY_ON_OFF = "SlowOnlyOnOff"
    OTHER = "Other"


# increasing arrival rate
EXPECTED_ORDER = (
    Regime.SLOW_ONLY_ON_OFF,
    Regime.SLOW_ONLY_ALWAYS_ON,
    Regime.BOTH_SPEEDS_ALWAYS_ON,
    Regime.FAST_ONLY_ALWAYS_ON,
)


def classify(policy: Policy) -> Regime:
    policy = policy.canonical()
    if policy.alpha == 0:
        if policy.k2 == 1:
            return Regime.FAST_ONLY_ALWAYS_ON
        if policy.k2 == INF:
            return Regime.SLOW_ONLY_ALWAYS_ON
        return Regime.BOTH_SPEEDS_ALWAYS_ON
    if policy.k2 == INF:
        return Regime.SLOW_ONLY_ON_OFF
    return Regime.OTHER


def simplicity_key(policy: Policy) -> tuple:
    return (
        policy.alpha > 0,
        policy.k2 not in (1, INF),
        policy.k1,
        policy.k2,
        policy.alpha,
    )


Evaluation = tuple  # (Policy, PolicyMetrics)


def evaluate_space(params: SystemParams, policies: Iterable[Policy],
                   tol: Tolerances = Tolerances()) -> list[Evaluation]:
    """Evaluate every stable policy; unstable ones are silently skipped."""
    out = []
    for policy in policies:
        try:
            out.append((policy, evaluate_policy(params, policy, tol)))
        except Unstable:
            continue
    return out


def select_best(evaluations: Sequence[Evaluation]) -> Evaluation:
    if not evaluations:
        raise EmptyFeasibleSet("no stable policy in the search space")
    best_cost = min(m.cost for _, m in evaluations)
    ties = [e for e in evaluations if e[1].cost <= best_cost + TIE_RTOL * abs(best_cost)]
    return min(ties, key=lambda e: simplicity_key(e[0]))


def optimize(params: SystemParams, space: SearchSpace = SearchSpace(),
             tol: Tolerances = Tolerances()) -> tuple[Policy, PolicyMetrics]:
    return select_best(evaluate_space(params, space.policies(), tol))


def _optimize_at(args):
    params, space, tol = args
    return optimize(params, space, tol)


def map_lambdas(fn: Callable, params: SystemParams, lambdas: Sequence[float], space: SearchSpace,
                tol: Tolerances, jobs: int = 1) -> list:
    """Apply ``fn((params_at_lambda, space, tol))`` over lambdas, in input order."""
    tasks = [(params.with_lambda(lam), space, tol) for lam in lambdas]
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# thresholds


@dataclass(frozen=True)
class RegimePoint:
    lam: float
    policy: Policy
    metrics: PolicyMetrics

    @property
    def regime(self) -> Regime:
        return classify(self.policy)


@dataclass
class ThresholdReport:
    lambda1: tuple | None
    lambda2: tuple | None
    lambda3: tuple | None
    # (lo, hi, regime): maximal lambda intervals whose evaluated points share a regime
    regime_sequence: list
    boundaries: list
    preference_flag: bool
    structure_violation: bool
    violations: list = field(default_factory=list)
    points: list = field(default_factory=list)

    @property
    def brackets(self) -> dict:
        return {"lambda3": self.lambda3, "lambda2": self.lambda2, "lambda1": self.lambda1}


def _check_preference(params: SystemParams) -> None:
    if not params.speed_tradeoff:
        raise PreferenceViolated(
            f"p_fast/(c mu) = {params.p_fast / params.fast_rate:g} <= p_slow/mu = "
            f"{params.p_slow / params.mu:g}: the fast speed is always preferable"
        )


def find_thresholds(params: SystemParams, lambda_range: tuple[float, float], resolution: float,
                    space: SearchSpace = SearchSpace(), tol: Tolerances = Tolerances(),
                    coarse_points: int = 38, jobs: int = 1) -> ThresholdReport:
    """Locate arrival rates where the structure of the optimal policy changes.

    ``params.lam`` is ignored.  A coarse grid is classified first; every
    adjacent pair with different regimes is bisected until its bracket is no
    wider than ``resolution``.  Regimes sandwiched inside a coarse cell are
    discovered by the bisection and bracketed too.
    """
    _check_preference(params)
    lo, hi = lambda_range
    grid = np.linspace(lo, hi, coarse_points)
    results = map_lambdas(_optimize_at, params, grid, space, tol, jobs)
    points = {float(lam): RegimePoint(float(lam), *res) for lam, res in zip(grid, results)}

    def at(lam):
        if lam not in points:
            points[lam] = RegimePoint(lam, *optimize(params.with_lambda(lam), space, tol))
        return points[lam]

    boundaries = []

    def bisect(a, b):
        ra, rb = at(a).regime, at(b).regime
        if ra == rb:
            return
        if b - a <= resolution:
            boundaries.append((a, b, ra, rb))
            return
        mid = 0.5 * (a + b)
        at(mid)
        bisect(a, mid)
        bisect(mid, b)

    for a, b in zip(grid[:-1], grid[1:]):
        bisect(float(a), float(b))

    ordered = sorted(points.values(), key=lambda p: p.lam)
    sequence = []
    for p in ordered:
        if sequence and sequence[-1][2] == p.regime:
            sequence[-1][1] = p.lam
        else:
            sequence.append([p.lam, p.lam, p.regime])
    sequence = [tuple(s) for s in sequence]

    observed = [s[2] for s in sequence]
    violations = []
    if observed != list(EXPECTED_ORDER):
        violations = [s for s in sequence if s[2] not in EXPECTED_ORDER]
        if not violations:
            violations = list(sequence)
    named = {
        (Regime.SLOW_ONLY_ON_OFF, Regime.SLOW_ONLY_ALWAYS_ON): "lambda3",
        (Regime.SLOW_ONLY_ALWAYS_ON, Regime.BOTH_SPEEDS_ALWAYS_ON): "lambda2",
        (Regime.BOTH_SPEEDS_ALWAYS_ON, Regime.FAST_ONLY_ALWAYS_ON): "lambda1",
    }
    found = {}
    for a, b, ra, rb in boundaries:
        name = named.get((ra, rb))
        if name and name not in found:
            found[name] = (a, b)
    return ThresholdReport(
        lambda1=found.get("lambda1"),
        lambda2=found.get("lambda2"),
        lambda3=found.get("lambda3"),
        regime_sequence=sequence,
        boundaries=sorted(boundaries, key=lambda x: x[0]),
        preference_flag=params.speed_tradeoff,
        structure_violation=bool(violations),
        violations=violations,
        points=ordered,
    )


# ---------------------------------------------------------------------------
# synergy


@dataclass(frozen=True)
class SynergyRow:
    lam: float
    best_overall: Evaluation
    best_never_off: Evaluation | None
    best_single_speed_onoff: Evaluation | None

    @property
    def best_overall_cost(self) -> float:
        return self.best_overall[1].cost

    @property
    def best_never_off_cost(self) -> float:
        return self.best_never_off[1].cost if self.best_never_off else INF

    @property
    def best_single_speed_onoff_cost(self) -> float:
        return self.best_single_speed_onoff[1].cost if self.best_single_speed_onoff else INF

    @property
    def relative_gain(self) -> float:
        restricted = min(self.best_never_off_cost, self.best_single_speed_onoff_cost)
        return (restricted - self.best_overall_cost) / restricted


@dataclass
class SynergyReport:
    rows: list
    smallness_threshold: float

    @property
    def max_relative_gain(self) -> float:
        return max(r.relative_gain for r in self.rows)

    @property
    def min_relative_gain(self) -> float:
        return min(r.relative_gain for r in self.rows)

    @property
    def small(self) -> bool:
        return self.max_relative_gain < self.smallness_threshold


def _synergy_at(args) -> SynergyRow:
    params, space, tol = args
    evals = evaluate_space(params, space.policies(), tol)
    never_off = [e for e in evals if e[0].alpha == 0]
    single = [e for e in evals if e[0].k2 in (1, INF)]
    return SynergyRow(
        lam=params.lam,
        best_overall=select_best(evals),
        best_never_off=select_best(never_off) if never_off else None,
        best_single_speed_onoff=select_best(single) if single else None,
    )


def synergy_gap(params: SystemParams, lambda_grid: Sequence[float], space: SearchSpace = SearchSpace(),
                tol: Tolerances = Tolerances(), smallness_threshold: float = 0.05,
                jobs: int = 1) -> SynergyReport:
    _check_preference(params)
    lambdas = sorted(float(x) for x in lambda_grid)
    rows = map_lambdas(_synergy_at, params, lambdas, space, tol, jobs)
    return SynergyReport(rows, smallness_threshold)
