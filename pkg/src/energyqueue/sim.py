"""Discrete-event simulator of the same single-server system, used as an
independent statistical check of the analytic pipeline."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateBatches, UnstableDetected
from .metrics import evaluate_policy
from .model import INF, Policy, ServerPhase, SystemParams, validate_params
from .solver import Tolerances

SAFETY_QUEUE = 10**6
_PHASES = (ServerPhase.OFF, ServerPhase.SWITCHING, ServerPhase.IDLE, ServerPhase.SLOW, ServerPhase.FAST)
OFF, SWITCHING, IDLE, SLOW, FAST = range(5)


@dataclass(frozen=True)
class SimConfig:
    params: SystemParams
    policy: Policy
    horizon: int = 2_000_000
    warmup: int | None = None  # defaults to 5% of horizon
    seed: int = 0
    batches: int = 20

    @property
    def warmup_count(self) -> int:
        return self.horizon // 20 if self.warmup is None else self.warmup


@dataclass(frozen=True)
class SimMetrics:
    mean_response_est: float
    mean_response_ci: float
    mean_power_est: float
    mean_power_ci: float
    mean_jobs_est: float
    mean_jobs_ci: float
    phase_time_fractions: dict
    completions: int
    throughput: float
    batch_response: np.ndarray = field(repr=False)
    batch_power: np.ndarray = field(repr=False)
    batch_jobs: np.ndarray = field(repr=False)

    def half_width(self, name: str, level: float = 0.95) -> float:
        return _half_width(getattr(self, f"batch_{name}"), level)


def _half_width(batch: np.ndarray, level: float) -> float:
    n = batch.size
    return float(stats.t.ppf(0.5 + level / 2, n - 1) * batch.std(ddof=1) / math.sqrt(n))


class _ExpStream:
    """Unit-mean exponential draws from a dedicated generator, in chunks."""

    def __init__(self, seed_seq: np.random.SeedSequence, chunk: int = 1 << 16):
        self._rng = np.random.Generator(np.random.PCG64(seed_seq))
        self._chunk = chunk
        self._buf = []

    def __call__(self) -> float:
        if not self._buf:
            self._buf = self._rng.standard_exponential(self._chunk).tolist()
            self._buf.reverse()
        return self._buf.pop()


def simulate(config: SimConfig) -> SimMetrics:
    params, policy, _ = validate_params(config.params, config.policy)
    warmup = config.warmup_count
    if not config.horizon > warmup >= 0:
        raise ValueError("need horizon > warmup >= 0")
    if config.batches < 2:
        raise DegenerateBatches("at least two batches are needed for a confidence interval")
    batch_size = (config.horizon - warmup) // config.batches
    if batch_size < 1:
        raise DegenerateBatches("fewer post-warmup completions than batches")

    arrivals, services, setups, turnoffs = (
        _ExpStream(s) for s in np.random.SeedSequence(config.seed).spawn(4)
    )
    lam, mu, fast, gamma = params.lam, params.mu, params.fast_rate, params.gamma
    k1, k2, alpha = policy.k1, policy.k2, policy.alpha
    power = (0.0, params.p_setup, params.p_idle, params.p_slow, params.p_fast)

    def phase(s, q):
        if s == 0:
            return OFF if q < k1 else SWITCHING
        if q == 0:
            return IDLE
        return SLOW if q < k2 else FAST

    t = 0.0
    q = 0
    s = 1  # start on and idle
    ph = IDLE
    queue = deque()
    t_arr = arrivals() / lam
    t_dep = t_setup = t_off = INF
    if 0 < alpha < INF:
        t_off = turnoffs() / alpha
    elif alpha == INF:
        s, ph = 0, phase(0, 0)

    done = 0
    total_done = config.batches * batch_size + warmup
    phase_time = [0.0] * 5
    energy = q_area = resp_sum = 0.0
    t_start = 0.0
    batch_resp, batch_pow, batch_jobs = [], [], []
    mark = (0.0, 0.0, 0.0)  # (time, energy, q_area) at start of current batch
    in_batch = 0

    while done < total_done:
        t_next = min(t_arr, t_dep, t_setup, t_off)
        dt = t_next - t
        phase_time[ph] += dt
        energy += power[ph] * dt
        q_area += q * dt
        t = t_next

        if t_next == t_arr:
            q += 1
            queue.append(t)
            t_arr = t + arrivals() / lam
            if s == 1:
                if q == 1:
                    t_off = INF
                    t_dep = t + services() / (fast if q >= k2 else mu)
                elif q == k2:
                    # memoryless speed-up of the job in service
                    t_dep = t + services() / fast
            elif q == k1:
                t_setup = t + setups() / gamma
            if q > SAFETY_QUEUE:
                raise UnstableDetected(f"queue exceeded {SAFETY_QUEUE} jobs")
        elif t_next == t_dep:
            q -= 1
            resp = t - queue.popleft()
            done += 1
            if q == 0:
                t_dep = INF
                if alpha == INF:
                    s = 0
                elif alpha > 0:
                    t_off = t + turnoffs() / alpha
            else:
                t_dep = t + services() / (fast if q >= k2 else mu)
            if done > warmup:
                resp_sum += resp
                in_batch += 1
                if in_batch == batch_size:
                    span = t - mark[0]
                    batch_resp.append(resp_sum / batch_size)
                    batch_pow.append((energy - mark[1]) / span)
                    batch_jobs.append((q_area - mark[2]) / span)
                    mark = (t, energy, q_area)
                    resp_sum = 0.0
                    in_batch = 0
            elif done == warmup:
                t_start = t
                phase_time = [0.0] * 5
                mark = (t, energy, q_area)
        elif t_next == t_setup:
            s = 1
            t_setup = INF
            t_dep = t + services() / (fast if q >= k2 else mu)
        else:
            s = 0
            t_off = INF
        ph = phase(s, q)
        assert (t_dep < INF) == (s == 1 and q >= 1)

    if warmup == 0:
        t_start = 0.0
    elapsed = t - t_start
    br, bp, bj = np.array(batch_resp), np.array(batch_pow), np.array(batch_jobs)
    fractions = dict(zip(_PHASES, (x / sum(phase_time) for x in phase_time)))
    return SimMetrics(
        mean_response_est=float(br.mean()),
        mean_response_ci=_half_width(br, 0.95),
        mean_power_est=float(bp.mean()),
        mean_power_ci=_half_width(bp, 0.95),
        mean_jobs_est=float(bj.mean()),
        mean_jobs_ci=_half_width(bj, 0.95),
        phase_time_fractions=fractions,
        completions=done - warmup,
        throughput=(done - warmup) / elapsed,
        batch_response=br,
        batch_power=bp,
        batch_jobs=bj,
    )


@dataclass(frozen=True)
class CrossValidation:
    policy: Policy
    analytic_response: float
    analytic_power: float
    sim_response: float
    sim_response_hw: float
    sim_power: float
    sim_power_hw: float
    level: float

    @property
    def response_ok(self) -> bool:
        return abs(self.analytic_response - self.sim_response) <= self.sim_response_hw

    @property
    def power_ok(self) -> bool:
        return abs(self.analytic_power - self.sim_power) <= self.sim_power_hw

    @property
    def passed(self) -> bool:
        return self.response_ok and self.power_ok


def cross_validate(params: SystemParams, policy: Policy, tol: Tolerances = Tolerances(),
                   horizon: int = 2_000_000, seed: int = 0, batches: int = 20,
                   level: float = 0.99, analytic_params: SystemParams | None = None) -> CrossValidation:
    """Check analytic E[R] and E[P] against the simulator's confidence intervals.

    ``analytic_params`` lets the analytic side run on different (e.g.
    deliberately perturbed) parameters, for negative controls.
    """
    analytic = evaluate_policy(analytic_params or params, policy, tol)
    sim = simulate(SimConfig(params, policy, horizon=horizon, seed=seed, batches=batches))
    return CrossValidation(
        policy=policy,
        analytic_response=analytic.mean_response,
        analytic_power=analytic.mean_power,
        sim_response=sim.mean_response_est,
        sim_response_hw=sim.half_width("response", level),
        sim_power=sim.mean_power_est,
        sim_power_hw=sim.half_width("power", level),
        level=level,
    )
