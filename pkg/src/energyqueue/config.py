"""Strict JSON experiment configuration.

Infinite thresholds and rates are written as the string ``"inf"``.  Missing
fields take the defaults below; these are artifact choices (the fast power
defaults to ``c**2 * p_slow``, setup power to the fast power), not measured
values.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import INF, Policy, SystemParams
from .optimizer import DEFAULT_ALPHA_GRID, SearchSpace
from .solver import Tolerances


class ConfigError(ValueError):
    pass


def _num(x, name):
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "infinity"):
            return INF
        raise ConfigError(f"{name}: expected a number or 'inf', got {x!r}")
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {x!r}")
    return float(x)


def _int(x, name):
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(f"{name}: expected an integer, got {x!r}")
    return x


def encode_num(x):
    if x == INF:
        return "inf"
    return int(x) if float(x).is_integer() and abs(x) < 2**53 else float(x)


def _strict(section: dict, allowed, name: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"{name}: expected an object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {sorted(unknown)}")
    return section


@dataclass(frozen=True)
class ParamsConfig:
    mu: float = 1.0
    c: float = 2.0
    gamma: float = 0.5
    p_idle: float = 0.6
    p_setup: float | None = None
    p_slow: float = 1.0
    p_fast: float | None = None
    beta: float = 0.5

    def resolved(self) -> "ParamsConfig":
        p_fast = self.c**2 * self.p_slow if self.p_fast is None else self.p_fast
        p_setup = p_fast if self.p_setup is None else self.p_setup
        return ParamsConfig(self.mu, self.c, self.gamma, self.p_idle, p_setup, self.p_slow, p_fast, self.beta)

    def at(self, lam: float) -> SystemParams:
        r = self.resolved()
        return SystemParams(lam, r.mu, r.c, r.gamma, r.p_idle, r.p_setup, r.p_slow, r.p_fast, r.beta)


@dataclass(frozen=True)
class SimSection:
    horizon: int = 2_000_000
    warmup: int | None = None
    batches: int = 20
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    params: ParamsConfig = field(default_factory=lambda: ParamsConfig().resolved())
    policy: Policy | None = None
    search: SearchSpace = field(default_factory=SearchSpace)
    lam: float | None = None
    lambda_range: tuple | None = None
    resolution: float = 1e-3
    coarse_points: int = 38
    tolerances: Tolerances = field(default_factory=Tolerances)
    sim: SimSection = field(default_factory=SimSection)
    smallness_threshold: float = 0.05
    output: str | None = None
    format: str = "csv"

    def system_params(self, lam: float | None = None) -> SystemParams:
        lam = self.lam if lam is None else lam
        if lam is None:
            raise ConfigError("an arrival rate is required (config 'lambda' or --lambda)")
        return self.params.at(lam)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        p = self.params.resolved()
        out = {
            "params": {k: encode_num(v) for k, v in asdict(p).items()},
            "search": {
                "k1_max": self.search.k1_max,
                "k2_max": self.search.k2_max,
                "alpha_grid": [encode_num(a) for a in self.search.alpha_grid],
            },
            "resolution": encode_num(self.resolution),
            "coarse_points": self.coarse_points,
            "tolerances": {k: encode_num(v) for k, v in asdict(self.tolerances).items()},
            "sim": asdict(self.sim),
            "smallness_threshold": encode_num(self.smallness_threshold),
            "format": self.format,
        }
        if self.policy is not None:
            out["policy"] = {"k1": self.policy.k1, "k2": encode_num(self.policy.k2),
                             "alpha": encode_num(self.policy.alpha)}
        if self.lam is not None:
            out["lambda"] = encode_num(self.lam)
        if self.lambda_range is not None:
            out["lambda_range"] = [encode_num(x) for x in self.lambda_range]
        if self.output is not None:
            out["output"] = self.output
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


_TOP = ("params", "policy", "search", "lambda", "lambda_range", "resolution", "coarse_points",
        "tolerances", "sim", "smallness_threshold", "output", "format")


def parse_config(data: dict) -> ExperimentConfig:
    data = _strict(data, _TOP, "config")
    kw = {}
    if "params" in data:
        sec = _strict(data["params"], [f.name for f in fields(ParamsConfig)], "params")
        kw["params"] = ParamsConfig(**{k: _num(v, f"params.{k}") for k, v in sec.items()}).resolved()
    if "policy" in data:
        sec = _strict(data["policy"], ("k1", "k2", "alpha"), "policy")
        k2 = _num(sec.get("k2", "inf"), "policy.k2")
        kw["policy"] = Policy(
            _int(sec.get("k1", 1), "policy.k1"),
            k2 if k2 == INF else int(k2),
            _num(sec.get("alpha", 0), "policy.alpha"),
        ).canonical()
    if "search" in data:
        sec = _strict(data["search"], ("k1_max", "k2_max", "alpha_grid"), "search")
        grid = sec.get("alpha_grid", list(DEFAULT_ALPHA_GRID))
        if not isinstance(grid, list):
            raise ConfigError("search.alpha_grid: expected a list")
        try:
            kw["search"] = SearchSpace(
                _int(sec.get("k1_max", 10), "search.k1_max"),
                _int(sec.get("k2_max", 20), "search.k2_max"),
                tuple(_num(a, "search.alpha_grid") for a in grid),
            )
        except ValueError as exc:
            raise ConfigError(f"search: {exc}") from exc
    if "lambda" in data:
        kw["lam"] = _num(data["lambda"], "lambda")
    if "lambda_range" in data:
        kw["lambda_range"] = _range(data["lambda_range"])
    for key in ("resolution", "smallness_threshold"):
        if key in data:
            kw[key] = _num(data[key], key)
    if "coarse_points" in data:
        kw["coarse_points"] = _int(data["coarse_points"], "coarse_points")
    if "tolerances" in data:
        sec = _strict(data["tolerances"], [f.name for f in fields(Tolerances)], "tolerances")
        vals = {k: (_int(v, f"tolerances.{k}") if k == "max_rounds" else _num(v, f"tolerances.{k}"))
                for k, v in sec.items()}
        kw["tolerances"] = Tolerances(**vals)
    if "sim" in data:
        sec = _strict(data["sim"], [f.name for f in fields(SimSection)], "sim")
        kw["sim"] = SimSection(**{k: (None if v is None and k == "warmup" else _int(v, f"sim.{k}"))
                                  for k, v in sec.items()})
    if "output" in data:
        if data["output"] is not None and not isinstance(data["output"], str):
            raise ConfigError("output: expected a path string")
        kw["output"] = data["output"]
    if "format" in data:
        if data["format"] not in ("csv", "json"):
            raise ConfigError("format: expected 'csv' or 'json'")
        kw["format"] = data["format"]
    return ExperimentConfig(**kw)


def _range(value) -> tuple:
    if isinstance(value, str):
        parts = value.split(":")
    elif isinstance(value, list):
        parts = value
    else:
        raise ConfigError("lambda_range: expected [lo, hi] or 'lo:hi'")
    if len(parts) != 2:
        raise ConfigError("lambda_range: expected exactly two endpoints")
    try:
        lo, hi = (float(p) if isinstance(p, str) else _num(p, "lambda_range") for p in parts)
    except ValueError as exc:
        raise ConfigError(f"lambda_range: {exc}") from exc
    if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo < hi):
        raise ConfigError("lambda_range: need 0 < lo < hi")
    return (lo, hi)


def parse_range(text: str) -> tuple:
    return _range(text)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)
