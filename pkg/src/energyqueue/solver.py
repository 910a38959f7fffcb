"""Stationary distribution of the on/off two-speed chain.

The truncated chain is solved by a sparse direct solve; the mass above the
truncation level is then reconstructed exactly.  Reflecting truncation only
distorts the last state of the off line, which collects the whole geometric
tail ``pi(0, q) ~ (lam / (lam + gamma))**q``.  Every other truncated
probability is proportional to the untruncated one because the level-cut
equations

    rate(q + 1) * pi(1, q + 1) = lam * (pi(0, q) + pi(1, q))

and the off-line balance equations are untouched below ``q_max``.  Summing the
cut equations over the tail gives closed forms for its mass and first moment.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .errors import NearlyUnstable, SingularSystem, ToleranceNotMet
from .model import (
    INF,
    Generator,
    Policy,
    SystemParams,
    build_generator,
    min_truncation,
    top_rate,
    validate_params,
)

NEAR_CAPACITY = 1e-6
CLIP_LIMIT = 1e-12


@dataclass(frozen=True)
class Tolerances:
    residual: float = 1e-10
    mass: float = 1e-12
    oracle: float = 1e-8
    max_rounds: int = 4


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    params: SystemParams
    policy: Policy
    s: np.ndarray
    q: np.ndarray
    probs: np.ndarray
    q_max: int
    tail_ratio_off: float
    tail_ratio_on: float
    residual: float
    tail_mass_bound: float
    # mass and first moment strictly above q_max, per line
    off_tail_mass: float
    on_tail_mass: float
    off_tail_moment: float
    on_tail_moment: float
    clipped: int = 0

    def prob(self, s: int, q: int) -> float:
        hits = np.flatnonzero((self.s == s) & (self.q == q))
        return float(self.probs[hits[0]]) if hits.size else 0.0

    def line(self, s: int) -> np.ndarray:
        """Probabilities pi(s, 0..q_max) as a dense vector (zeros for absent states)."""
        out = np.zeros(self.q_max + 1)
        mask = self.s == s
        out[self.q[mask]] = self.probs[mask]
        return out

    def as_dict(self) -> dict:
        return {(int(s), int(q)): float(p) for s, q, p in zip(self.s, self.q, self.probs)}

    @property
    def total_mass(self) -> float:
        return float(self.probs.sum()) + self.off_tail_mass + self.on_tail_mass


def tail_ratio_off(params: SystemParams) -> float:
    return params.lam / (params.lam + params.gamma)


def _check_capacity(params: SystemParams, policy: Policy) -> float:
    rho_top = params.lam / top_rate(params, policy)
    if 1 - rho_top < NEAR_CAPACITY:
        raise NearlyUnstable(f"load {rho_top} within {NEAR_CAPACITY} of capacity")
    return rho_top


def adaptive_truncation(params: SystemParams, policy: Policy, tol: float) -> int:
    """Smallest q_max above the floor whose geometric tail bound is below ``tol``."""
    params, policy, _ = validate_params(params, policy)
    rho = _check_capacity(params, policy)
    if policy.alpha > 0:
        rho = max(rho, tail_ratio_off(params))
    finite_k2 = 0 if policy.k2 == INF else int(policy.k2)
    knee = max(policy.k1, finite_k2 or 1)
    floor = max(policy.k1, finite_k2, 8)

    def bound(q):
        return rho ** (q - knee) / (1 - rho)

    q_max = floor
    if bound(q_max) >= tol:
        q_max = max(floor, knee + math.ceil(math.log(tol * (1 - rho)) / math.log(rho)))
        while q_max > floor and bound(q_max - 1) < tol:
            q_max -= 1
        while bound(q_max) >= tol:
            q_max += 1
    return max(q_max, min_truncation(policy))


def _solve_truncated(gen: Generator) -> np.ndarray:
    # rows of Q^T are the balance equations; the last one is replaced by sum(pi) = 1
    n = gen.dimension
    keep = gen.cols != n - 1
    a = sp.csc_matrix(
        (np.concatenate([gen.rates[keep], np.ones(n)]),
         (np.concatenate([gen.cols[keep], np.full(n, n - 1)]),
          np.concatenate([gen.rows[keep], np.arange(n)]))),
        shape=(n, n),
    )
    b = np.zeros(n)
    b[-1] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            pi = spsolve(a, b)
        except MatrixRankWarning as exc:
            raise SingularSystem("generator is singular; chain is reducible or mis-built") from exc
    if not np.all(np.isfinite(pi)):
        raise SingularSystem("non-finite stationary vector")
    return pi


def _extrapolate(params, policy, gen, pi_t, residual, clipped) -> StationaryDistribution:
    q_max = gen.q_max
    r0 = tail_ratio_off(params)
    a = params.lam / top_rate(params, policy)
    probs = pi_t.copy()

    on_last = pi_t[(gen.s == 1) & (gen.q == q_max)][0]
    if policy.alpha > 0:
        last = np.flatnonzero((gen.s == 0) & (gen.q == q_max))[0]
        prev = np.flatnonzero((gen.s == 0) & (gen.q == q_max - 1))[0]
        off_last = r0 * pi_t[prev]
        probs[last] = off_last
        # mass and sum of (q - q_max) * pi over the off line from q_max upward
        off_from = off_last / (1 - r0)
        off_from_moment = off_last * r0 / (1 - r0) ** 2
        off_beyond = off_last * r0 / (1 - r0)
        off_beyond_moment = off_last * (q_max * r0 / (1 - r0) + r0 / (1 - r0) ** 2)
        ratio_on = max(a, r0)
    else:
        off_from = off_from_moment = off_beyond = off_beyond_moment = 0.0
        ratio_on = a

    on_beyond = a * (on_last + off_from) / (1 - a)
    on_excess = a * (on_last + on_beyond + off_from_moment + off_from) / (1 - a)
    on_beyond_moment = q_max * on_beyond + on_excess

    total = probs.sum() + off_beyond + on_beyond
    probs /= total
    tail_mass = (off_beyond + on_beyond) / total
    return StationaryDistribution(
        params=params,
        policy=policy,
        s=gen.s,
        q=gen.q,
        probs=probs,
        q_max=q_max,
        tail_ratio_off=r0,
        tail_ratio_on=ratio_on,
        residual=residual,
        tail_mass_bound=float(tail_mass),
        off_tail_mass=float(off_beyond / total),
        on_tail_mass=float(on_beyond / total),
        off_tail_moment=float(off_beyond_moment / total),
        on_tail_moment=float(on_beyond_moment / total),
        clipped=clipped,
    )


def solve_stationary(params: SystemParams, policy: Policy, tol: Tolerances = Tolerances(),
                     q_max: int | None = None) -> StationaryDistribution:
    """Solve pi Q = 0 on the truncated chain and attach the exact tail.

    ``q_max`` overrides the adaptive truncation level (used by refinement
    checks); it is still doubled if the extrapolated tail mass exceeds
    ``tol.mass``.
    """
    params, policy, _ = validate_params(params, policy)
    _check_capacity(params, policy)
    if q_max is None:
        q_max = adaptive_truncation(params, policy, tol.mass)

    for _ in range(tol.max_rounds):
        gen = build_generator(params, policy, q_max)
        pi = _solve_truncated(gen)
        if pi.min() < -CLIP_LIMIT:
            raise ToleranceNotMet(f"negative probability {pi.min():.3e} for {policy}")
        clipped = int(np.count_nonzero(pi < 0))
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        residual = float(np.abs(gen.left_multiply(pi)).max())
        dist = _extrapolate(params, policy, gen, pi, residual, clipped)
        if residual <= tol.residual and dist.tail_mass_bound <= tol.mass:
            return dist
        q_max *= 2
    raise ToleranceNotMet(
        f"residual {residual:.3e} / tail mass {dist.tail_mass_bound:.3e} above tolerance for {policy}"
    )


def closed_form_oracle(params: SystemParams, policy: Policy):
    """Exact metrics for the reductions with known closed forms, else ``None``.

    Covered: always-on slow M/M/1, always-on fast M/M/1, and slow M/M/1 with
    exponential setup that turns off instantly and restarts on the first
    arrival.
    """
    from .metrics import PolicyMetrics
    from .model import ServerPhase as P

    lam, mu, g = params.lam, params.mu, params.gamma
    phases = dict.fromkeys(P, 0.0)
    if policy.alpha == 0 and policy.k2 in (1, INF):
        rate = params.fast_rate if policy.k2 == 1 else mu
        busy = P.FAST if policy.k2 == 1 else P.SLOW
        rho = lam / rate
        phases[P.IDLE] = 1 - rho
        phases[busy] = rho
        mean_response = 1 / (rate - lam)
    elif policy.alpha == INF and policy.k1 == 1 and policy.k2 == INF:
        rho = lam / mu
        # idle cycle = waiting for the first arrival, then one setup
        phases[P.OFF] = (1 - rho) * g / (lam + g)
        phases[P.SWITCHING] = (1 - rho) * lam / (lam + g)
        phases[P.SLOW] = rho
        mean_response = 1 / (mu - lam) + 1 / g
    else:
        return None
    power = (params.p_idle * phases[P.IDLE] + params.p_setup * phases[P.SWITCHING]
             + params.p_slow * phases[P.SLOW] + params.p_fast * phases[P.FAST])
    return PolicyMetrics(
        mean_jobs=lam * mean_response,
        mean_response=mean_response,
        mean_power=power,
        cost=mean_response + params.beta * power,
        phase_probs=phases,
    )
