"""Domain types and CTMC generator for a single server with on/off control
and two service speeds.

The chain lives on states ``(s, q)`` where ``s = 0`` means the server is off
(either fully off or in setup) and ``s = 1`` means it is on (idle or serving),
and ``q`` is the number of jobs in the system.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import BadThreshold, NegativeRate, NonScaledSpeed, TruncationTooSmall, Unstable

INF = math.inf


@dataclass(frozen=True)
class SystemParams:
    lam: float
    mu: float
    c: float
    gamma: float
    p_idle: float
    p_setup: float
    p_slow: float
    p_fast: float
    beta: float

    def with_lambda(self, lam: float) -> "SystemParams":
        return replace(self, lam=float(lam))

    @property
    def fast_rate(self) -> float:
        return self.c * self.mu

    @property
    def speed_tradeoff(self) -> bool:
        """True when a job served fast costs more energy than one served slow."""
        return self.p_fast / self.fast_rate > self.p_slow / self.mu


@dataclass(frozen=True, order=False)
class Policy:
    """Control triple. ``k2 = INF`` means FAST is never used; ``alpha`` may be
    ``0`` (never turn off) or ``INF`` (turn off the moment the system empties)."""

    k1: int = 1
    k2: float = INF
    alpha: float = 0.0

    def canonical(self) -> "Policy":
        if self.alpha == 0:
            return replace(self, k1=1)
        return self

    @property
    def key(self) -> tuple:
        return (self.k1, self.k2, self.alpha)

    def __str__(self) -> str:
        return f"(k1={self.k1}, k2={_fmt(self.k2)}, alpha={_fmt(self.alpha)})"


def _fmt(x: float) -> str:
    return "inf" if x == INF else f"{x:g}"


class ServerPhase(enum.Enum):
    OFF = "Off"
    SWITCHING = "Switching"
    IDLE = "Idle"
    SLOW = "Slow"
    FAST = "Fast"


class Validated(NamedTuple):
    params: SystemParams
    policy: Policy
    speed_tradeoff: bool


def service_rate(params: SystemParams, policy: Policy, q: int) -> float:
    return params.fast_rate if q >= policy.k2 else params.mu


def top_rate(params: SystemParams, policy: Policy) -> float:
    """Service rate used for arbitrarily long queues."""
    return params.mu if policy.k2 == INF else params.fast_rate


def validate_params(params: SystemParams, policy: Policy) -> Validated:
    rates = {"lambda": params.lam, "mu": params.mu, "gamma": params.gamma, "alpha": policy.alpha}
    for name, value in rates.items():
        if not value >= 0:
            raise NegativeRate(f"{name} must be non-negative, got {value}")
    for name in ("lam", "mu", "gamma"):
        if getattr(params, name) == 0:
            raise NegativeRate(f"{name} must be positive")
    if not params.c > 1:
        raise NonScaledSpeed(f"speed factor c must exceed 1, got {params.c}")
    if params.beta < 0:
        raise NegativeRate(f"beta must be non-negative, got {params.beta}")
    if min(params.p_idle, params.p_setup) < 0 or not 0 < params.p_slow <= params.p_fast:
        raise NegativeRate("power levels must satisfy 0 <= p_idle, p_setup and 0 < p_slow <= p_fast")
    if policy.k1 < 1 or int(policy.k1) != policy.k1:
        raise BadThreshold(f"k1 must be an integer >= 1, got {policy.k1}")
    if policy.k2 != INF and (policy.k2 < 1 or int(policy.k2) != policy.k2):
        raise BadThreshold(f"k2 must be an integer >= 1 or inf, got {policy.k2}")

    policy = Policy(int(policy.k1), policy.k2 if policy.k2 == INF else int(policy.k2),
                    float(policy.alpha)).canonical()
    rate = top_rate(params, policy)
    if params.lam >= rate:
        raise Unstable(f"arrival rate {params.lam} >= service capacity {rate}")
    return Validated(params, policy, params.speed_tradeoff)


def phase_of(s: int, q: int, policy: Policy) -> ServerPhase:
    if s == 0:
        return ServerPhase.OFF if q < policy.k1 else ServerPhase.SWITCHING
    if q == 0:
        return ServerPhase.IDLE
    return ServerPhase.SLOW if q < policy.k2 else ServerPhase.FAST


@dataclass(frozen=True, eq=False)
class Generator:
    """Truncated generator in triplet form (diagonal included).

    States are ordered s=1 line first (ascending q), then the s=0 line.
    """

    rows: np.ndarray
    cols: np.ndarray
    rates: np.ndarray
    s: np.ndarray
    q: np.ndarray
    q_max: int

    @property
    def dimension(self) -> int:
        return self.s.size

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        n = self.dimension
        return sp.csr_matrix((self.rates, (self.rows, self.cols)), shape=(n, n))

    def left_multiply(self, pi: np.ndarray) -> np.ndarray:
        """Return pi @ Q."""
        return np.bincount(self.cols, weights=pi[self.rows] * self.rates, minlength=self.dimension)

    def index(self, s: int, q: int) -> int:
        hits = np.flatnonzero((self.s == s) & (self.q == q))
        if hits.size == 0:
            raise KeyError((s, q))
        return int(hits[0])

    def entries(self):
        """Off-diagonal (from, to, rate) triples."""
        for i, j, r in zip(self.rows, self.cols, self.rates):
            if i != j:
                yield (int(self.s[i]), int(self.q[i])), (int(self.s[j]), int(self.q[j])), float(r)


def min_truncation(policy: Policy) -> int:
    knee = max(policy.k1, 0 if policy.k2 == INF else policy.k2)
    return int(knee) + 2


def build_generator(params: SystemParams, policy: Policy, q_max: int) -> Generator:
    if q_max < min_truncation(policy):
        raise TruncationTooSmall(f"q_max={q_max} below {min_truncation(policy)} for {policy}")
    lam, mu, gamma, alpha = params.lam, params.mu, params.gamma, policy.alpha
    k1, k2 = policy.k1, policy.k2

    on_start = 1 if alpha == INF else 0
    q_on = np.arange(on_start, q_max + 1)
    q_off = np.arange(q_max + 1) if alpha > 0 else np.arange(0)
    n_on = q_on.size
    s = np.concatenate([np.ones(n_on, dtype=int), np.zeros(q_off.size, dtype=int)])
    q = np.concatenate([q_on, q_off])

    def on_idx(qq):
        return np.asarray(qq) - on_start

    def off_idx(qq):
        return n_on + np.asarray(qq)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        r, c = np.atleast_1d(r), np.atleast_1d(c)
        rows.append(r)
        cols.append(c)
        vals.append(np.broadcast_to(np.asarray(v, dtype=float), r.shape))

    # s=1 arrivals
    up = q_on[q_on < q_max]
    add(on_idx(up), on_idx(up + 1), lam)
    # s=1 services; the last departure goes to (0,0) under instant turnoff
    down = q_on[q_on >= 1]
    rates = np.where(down >= k2, params.fast_rate, mu)
    if alpha == INF:
        add(on_idx(down[down >= 2]), on_idx(down[down >= 2] - 1), rates[down >= 2])
        add(on_idx(1), off_idx(0), rates[0])
    else:
        add(on_idx(down), on_idx(down - 1), rates)
    if alpha > 0:
        if alpha != INF:
            add(on_idx(0), off_idx(0), alpha)
        up = q_off[q_off < q_max]
        add(off_idx(up), off_idx(up + 1), lam)
        sw = q_off[q_off >= k1]
        add(off_idx(sw), on_idx(sw), gamma)

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    n = s.size
    out = np.bincount(r, weights=v, minlength=n)
    diag = np.arange(n)
    return Generator(np.concatenate([r, diag]), np.concatenate([c, diag]),
                     np.concatenate([v, -out]), s, q, q_max)
