"""Command-line front end.

    energyqueue eval       --config cfg.json --lambda 0.5
    energyqueue optimize   --config cfg.json --lambda 0.5
    energyqueue sweep      --config cfg.json --lambda-range 0.05:1.9 --resolution 0.05
    energyqueue thresholds --config cfg.json --lambda-range 0.05:1.9 --resolution 1e-3
    energyqueue synergy    --config cfg.json --lambda-range 0.05:1.9
    energyqueue simulate   --config cfg.json --lambda 0.6 --seed 7
    energyqueue validate   --config cfg.json

Exit codes: 0 success, 1 domain error or failed validation, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import validation
from .config import ConfigError, ExperimentConfig, load_config, parse_range
from .errors import ModelError
from .metrics import PolicyMetrics, evaluate_policy
from .model import INF, Policy
from .optimizer import classify, find_thresholds, optimize, synergy_gap
from .sim import SimConfig, simulate

SWEEP_COLUMNS = ["lambda", "k1", "k2", "alpha", "regime", "E_N", "E_R", "E_P", "cost",
                 "residual", "q_max", "tail_mass"]
THRESHOLD_COLUMNS = ["kind", "name", "lambda_lo", "lambda_hi", "regime", "k1", "k2", "alpha", "cost",
                     "residual", "q_max", "tail_mass"]
SYNERGY_COLUMNS = ["lambda", "k1", "k2", "alpha", "regime", "best_overall_cost", "best_never_off_cost",
                   "best_single_speed_onoff_cost", "relative_gain", "residual", "q_max", "tail_mass"]
SIM_COLUMNS = ["lambda", "k1", "k2", "alpha", "seed", "completions", "E_R_sim", "E_R_ci95", "E_P_sim",
               "E_P_ci95", "E_N_sim", "E_N_ci95"]
VALIDATE_COLUMNS = ["check", "passed", "detail"]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "inf" if x == INF else repr(x)
    return str(x)


def metric_row(lam: float, policy: Policy, m: PolicyMetrics) -> list:
    return [lam, policy.k1, policy.k2, policy.alpha, classify(policy).value, m.mean_jobs,
            m.mean_response, m.mean_power, m.cost, m.residual, m.q_max, m.tail_mass]


def render(columns: list, rows: list, fmt_name: str, summary: dict | None = None) -> str:
    cells = [[fmt(v) for v in row] for row in rows]
    if fmt_name == "json":
        doc = {"columns": columns, "rows": [dict(zip(columns, r)) for r in cells]}
        if summary is not None:
            doc["summary"] = {k: fmt(v) for k, v in summary.items()}
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(cells)
    return buf.getvalue()


def lambda_grid(lo: float, hi: float, step: float) -> list:
    n = int(np.floor((hi - lo) / step + 1e-9))
    return [round(lo + i * step, 12) for i in range(n + 1)]


# -- subcommands ---------------------------------------------------------------


def cmd_eval(cfg: ExperimentConfig, args):
    if cfg.policy is None:
        raise ConfigError("eval needs a 'policy' section in the config")
    params = cfg.system_params()
    m = evaluate_policy(params, cfg.policy, cfg.tolerances)
    summary = f"{cfg.policy} at lambda={params.lam:g}: E[R]={m.mean_response:.10g} E[P]={m.mean_power:.10g} cost={m.cost:.10g}"
    return SWEEP_COLUMNS, [metric_row(params.lam, cfg.policy, m)], summary, None, 0


def cmd_optimize(cfg: ExperimentConfig, args):
    params = cfg.system_params()
    policy, m = optimize(params, cfg.search, cfg.tolerances)
    summary = f"optimal policy at lambda={params.lam:g}: {policy} [{classify(policy).value}] cost={m.cost:.10g}"
    return SWEEP_COLUMNS, [metric_row(params.lam, policy, m)], summary, None, 0


def cmd_sweep(cfg: ExperimentConfig, args):
    lo, hi = _need_range(cfg)
    rows = []
    for lam in lambda_grid(lo, hi, cfg.resolution):
        params = cfg.system_params(lam)
        if cfg.policy is not None:
            rows.append(metric_row(lam, cfg.policy, evaluate_policy(params, cfg.policy, cfg.tolerances)))
        else:
            rows.append(metric_row(lam, *optimize(params, cfg.search, cfg.tolerances)))
    rows.sort(key=lambda r: r[0])
    what = f"policy {cfg.policy}" if cfg.policy else "optimal policies"
    return SWEEP_COLUMNS, rows, f"swept {len(rows)} arrival rates ({what})", None, 0


def threshold_rows(report) -> list:
    by_lam = {p.lam: p for p in report.points}
    rows = []
    for a, b, regime in report.regime_sequence:
        p = by_lam[a]
        m = p.metrics
        rows.append(["interval", "", a, b, regime.value, p.policy.k1, p.policy.k2, p.policy.alpha, m.cost,
                     m.residual, m.q_max, m.tail_mass])
    for name, bracket in report.brackets.items():
        if bracket is None:
            rows.append(["threshold", name, None, None, "", None, None, None, None, None, None, None])
            continue
        p = by_lam[bracket[1]]
        m = p.metrics
        rows.append(["threshold", name, bracket[0], bracket[1], p.regime.value, p.policy.k1, p.policy.k2,
                     p.policy.alpha, m.cost, m.residual, m.q_max, m.tail_mass])
    for a, b, regime in report.violations:
        rows.append(["violation", "structure_violation", a, b, regime.value] + [None] * 7)
    return rows


def cmd_thresholds(cfg: ExperimentConfig, args):
    lo, hi = _need_range(cfg)
    report = find_thresholds(cfg.system_params(lo), (lo, hi), cfg.resolution, cfg.search, cfg.tolerances,
                             coarse_points=cfg.coarse_points, jobs=args.jobs)
    seq = " -> ".join(r.value for _, _, r in report.regime_sequence)
    lines = [f"regime sequence: {seq}"]
    lines += [f"{k}: {v}" for k, v in report.brackets.items()]
    if report.structure_violation:
        lines.append("structure_violation: observed regime order differs from "
                     "SlowOnlyOnOff -> SlowOnlyAlwaysOn -> BothSpeedsAlwaysOn -> FastOnlyAlwaysOn")
    summary_json = {"structure_violation": report.structure_violation}
    return THRESHOLD_COLUMNS, threshold_rows(report), "\n".join(lines), summary_json, 0


def synergy_rows(report) -> list:
    rows = []
    for r in report.rows:
        p, m = r.best_overall
        rows.append([r.lam, p.k1, p.k2, p.alpha, classify(p).value, r.best_overall_cost, r.best_never_off_cost,
                     r.best_single_speed_onoff_cost, r.relative_gain, m.residual, m.q_max, m.tail_mass])
    rows.append(["max", None, None, None, "", None, None, None, report.max_relative_gain, None, None, None])
    return rows


def cmd_synergy(cfg: ExperimentConfig, args):
    lo, hi = _need_range(cfg)
    grid = np.linspace(lo, hi, cfg.coarse_points)
    report = synergy_gap(cfg.system_params(lo), grid, cfg.search, cfg.tolerances,
                         cfg.smallness_threshold, jobs=args.jobs)
    summary = (f"max relative gain of combining mechanisms: {report.max_relative_gain:.6g} "
               f"(threshold {report.smallness_threshold:g}; {'small' if report.small else 'NOT small'})")
    return SYNERGY_COLUMNS, synergy_rows(report), summary, {"max_relative_gain": report.max_relative_gain,
                                                            "small": report.small}, 0


def cmd_simulate(cfg: ExperimentConfig, args):
    if cfg.policy is None:
        raise ConfigError("simulate needs a 'policy' section in the config")
    params = cfg.system_params()
    sc = cfg.sim
    m = simulate(SimConfig(params, cfg.policy, sc.horizon, sc.warmup, sc.seed, sc.batches))
    row = [params.lam, cfg.policy.k1, cfg.policy.k2, cfg.policy.alpha, sc.seed, m.completions,
           m.mean_response_est, m.mean_response_ci, m.mean_power_est, m.mean_power_ci,
           m.mean_jobs_est, m.mean_jobs_ci]
    summary = (f"simulated {cfg.policy} at lambda={params.lam:g}: E[R]={m.mean_response_est:.6g}"
               f"±{m.mean_response_ci:.3g} E[P]={m.mean_power_est:.6g}±{m.mean_power_ci:.3g} (95% CI)")
    return SIM_COLUMNS, [row], summary, None, 0


def cmd_validate(cfg: ExperimentConfig, args):
    results = validation.run_suite(cfg)
    rows = [[r.name, r.passed, r.detail] for r in results]
    failed = [r.name for r in results if not r.passed]
    summary = f"{len(results) - len(failed)}/{len(results)} checks passed"
    if failed:
        summary += "; failed: " + ", ".join(failed)
    return VALIDATE_COLUMNS, rows, summary, None, 1 if failed else 0


COMMANDS = {
    "eval": cmd_eval,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "thresholds": cmd_thresholds,
    "synergy": cmd_synergy,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
}


def _need_range(cfg: ExperimentConfig) -> tuple:
    if cfg.lambda_range is None:
        raise ConfigError("a lambda range is required (config 'lambda_range' or --lambda-range)")
    return cfg.lambda_range


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="energyqueue", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--lambda-range", metavar="LO:HI")
        p.add_argument("--resolution", type=float)
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        p.add_argument("--smallness-threshold", type=float)
    return parser


def apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    kw = {}
    if args.lam is not None:
        kw["lam"] = args.lam
    if args.lambda_range is not None:
        kw["lambda_range"] = parse_range(args.lambda_range)
    if args.resolution is not None:
        kw["resolution"] = args.resolution
    if args.out is not None:
        kw["output"] = args.out
    if args.format is not None:
        kw["format"] = args.format
    if args.seed is not None:
        kw["sim"] = replace(cfg.sim, seed=args.seed)
    if args.smallness_threshold is not None:
        kw["smallness_threshold"] = args.smallness_threshold
    return replace(cfg, **kw)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"energyqueue: error: {exc}", file=sys.stderr)
        return 2
    try:
        columns, rows, summary, extra, code = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"energyqueue: error: {exc}", file=sys.stderr)
        return 2
    except ModelError as exc:
        print(f"energyqueue: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    text = render(columns, rows, cfg.format, extra)
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            fh.write(text)
        print(summary)
    else:
        sys.stdout.write(text)
        print(summary, file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
