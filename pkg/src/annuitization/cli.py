"""Command-line interface: solve, calibrate, sweep, simulate, verify, reproduce-paper."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import AnnuitizationError, ConfigError, IllPosed
from .model import ModelConfig, config_to_dict, load_config, validate_config
from .montecarlo import IMMEDIATELY, NEVER, SimConfig, evaluate_policy, optimality_probe, \
    policy_from_solution
from .mortality import calibrate, enumerate_states, life_expectancy
from .scenarios import POSITIVE_FEE, health_shock_config, reproduce
from .solver import GridSpec, Solution, solve_all
from .sweep import PARAMETERS, SweepSpec, run_sweep
from .verify import run_suite

EXIT_OK, EXIT_CONFIG, EXIT_ILLPOSED, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("annuitization")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def _write_csv(rows: list[dict], out: Optional[str]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
    text = buf.getvalue()
    if out:
        Path(out).write_text(text)
    return text


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(data, out: Optional[str]) -> str:
    text = json.dumps(_jsonable(data), indent=2, sort_keys=False) + "\n"
    if out:
        Path(out).write_text(text)
    return text


def _config(args) -> ModelConfig:
    if args.config:
        return load_config(args.config)
    return health_shock_config(**POSITIVE_FEE)


def _grid(args) -> GridSpec:
    return GridSpec(count=args.grid_points, x_lo=args.x_lo, x_hi=args.x_hi)


def _sim(args) -> SimConfig:
    return SimConfig(n_paths=args.paths, dt=args.dt, seed=args.seed)


def _summary_table(sol: Solution) -> str:
    lines = [f"{'node':>4} {'n':>2} {'mu':>10} {'regime':<18} {'thresholds':<28} {'slope':>9}"]
    for r in sol.summary():
        thr = ", ".join(_fmt(t) for t in r["thresholds"]) or "-"
        tag = r["regime"] + (" (closed form)" if r["closed_form"] else "")
        lines.append(f"{r['node_id']:>4} {r['n']:>2} {r['mu']:>10.6g} {tag:<18} {thr:<28} "
                     f"{r['asymptotic_slope']:>9.6g}")
    return "\n".join(lines)


def _value_rows(sol: Solution) -> list[dict]:
    rows = []
    for sv in sol.stages:
        x = sv.grid.points
        M = sv.M_values if sv.M_values is not None else np.full_like(x, np.nan)
        for xi, v, wv, m in zip(x, sv.values, sv.W_values, M):
            rows.append({"node_id": sv.node.index, "n": sv.node.n, "mu": sv.node.mu, "x": xi,
                         "V": v, "W": wv, "M": m})
    return rows


def cmd_solve(args) -> int:
    cfg = validate_config(_config(args))
    sol = solve_all(cfg, _grid(args))
    print(_summary_table(sol))
    if args.format == "json":
        text = _write_json({"config": config_to_dict(cfg), "nodes": sol.summary(),
                            "values": _value_rows(sol) if args.values else []}, args.out)
        if not args.out:
            print(text, end="")
    else:
        if args.out:
            _write_csv(_value_rows(sol), args.out)
            _write_json({"config": config_to_dict(cfg), "nodes": sol.summary()},
                        str(Path(args.out).with_suffix(".summary.json")))
        elif args.values:
            print(_write_csv(_value_rows(sol), None), end="")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args) if args.mode == "baseline" else None
    value = calibrate(args.target, args.mode, cfg)
    out = {"mode": args.mode, "target": args.target, "rate": value}
    if cfg is not None:
        c = validate_config(cfg)
        out["life_expectancy_at_config"] = life_expectancy(enumerate_states(c).root, c)
    if args.format == "json":
        print(_write_json(out, args.out), end="")
    else:
        print(_write_csv([out], args.out), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = tuple(float(v) for v in args.values.split(","))
    spec = SweepSpec(args.parameter, values, args.out)
    rows = run_sweep(cfg, spec, _grid(args))
    table = [{"parameter": args.parameter, "value": r.value, "threshold": r.threshold,
              "regime": r.regime, "thresholds": " ".join(_fmt(t) for t in r.thresholds),
              "error": r.error} for r in rows]
    text = _write_json(table, args.out) if args.format == "json" else _write_csv(table, args.out)
    if not args.out:
        print(text, end="")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = validate_config(_config(args))
    sim = _sim(args)
    if args.policy == "solver":
        sol = solve_all(cfg, _grid(args))
        policy = policy_from_solution(sol)
    else:
        sol = None
        policy = {k: (NEVER if args.policy == "never" else IMMEDIATELY)
                  for k in range(len(enumerate_states(cfg)))}
    out = {}
    res = evaluate_policy(cfg, sim, policy, args.x0, node=args.node, mode=args.estimator)
    out["policy_value"] = {"x0": args.x0, "node": args.node, "mean": res.mean, "stderr": res.stderr,
                           "n_paths": res.n_paths}
    if sol is not None:
        out["policy_value"]["solver_value"] = float(sol[args.node](args.x0))
    if args.probe and sol is not None:
        rep = optimality_probe(cfg, sim, sol, args.perturbation)
        out["probe"] = {"verdict": rep.verdict,
                        "entries": [vars(e) for e in rep.entries]}
    if args.format == "json":
        print(_write_json(out, args.out), end="")
    else:
        rows = [out["policy_value"]]
        print(_write_csv(rows, args.out), end="")
        if "probe" in out:
            print(f"probe: {out['probe']['verdict']}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = validate_config(_config(args))
    sol = solve_all(cfg, _grid(args))
    rep = run_suite(cfg, sol, _sim(args), monte_carlo=not args.no_mc)
    if args.format == "json":
        text = _write_json(rep.to_dict(), args.out)
        if not args.out:
            print(text, end="")
    else:
        print(rep.table())
        if args.out:
            _write_csv([vars(r) for r in rep.records], args.out)
    print(f"suite: {'PASS' if rep.passed else 'FAIL'} ({len(rep.failures())} failing records)")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    rep = reproduce(_sim(args), _grid(args), arbitrate=not args.no_probe)
    print(rep.table())
    if args.out:
        if args.format == "json":
            _write_json(rep.to_dict(), args.out)
        else:
            _write_csv([vars(r) for r in rep.rows], args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="model config JSON (default: the built-in health-shock scenario)")
    common.add_argument("--out", help="output file")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, default=SimConfig.seed)
    common.add_argument("--grid-points", type=int, default=GridSpec.count)
    common.add_argument("--x-lo", type=float, default=None)
    common.add_argument("--x-hi", type=float, default=None)
    common.add_argument("--paths", type=int, default=SimConfig.n_paths)
    common.add_argument("--dt", type=float, default=SimConfig.dt)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="annuitization", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve every stage and print thresholds")
    s.add_argument("--values", action="store_true", help="also emit the value tables")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("calibrate", parents=[common], help="mortality rate from a life expectancy")
    s.add_argument("--target", type=float, required=True)
    s.add_argument("--mode", choices=("baseline", "objective"), default="baseline")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sweep", parents=[common], help="root threshold against one parameter")
    s.add_argument("--parameter", choices=PARAMETERS, required=True)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo value of a policy")
    s.add_argument("--x0", type=float, default=10_000.0)
    s.add_argument("--node", type=int, default=0)
    s.add_argument("--policy", choices=("solver", "never", "immediately"), default="solver")
    s.add_argument("--estimator", choices=("integrated", "raw"), default="integrated")
    s.add_argument("--probe", action="store_true", help="run the optimality probe")
    s.add_argument("--perturbation", type=float, default=0.1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    s.add_argument("--no-mc", action="store_true", help="skip the Monte Carlo check")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("reproduce-paper", parents=[common],
                       help="compare both reference scenarios with published values")
    s.add_argument("--no-probe", action="store_true", help="skip probe arbitration of flagged rows")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IllPosed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ILLPOSED
    except (ConfigError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AnnuitizationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
