"""Command-line front end: ``vccopt {solve,baseline,sweep,compare,validate}``.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 partial result
(some sweep rows or compared methods failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .errors import ParseError, ValidationError, VccError
from .reporting import (
    SOLVER_KEYS,
    SolverConfig,
    compare_methods,
    comparison_payload,
    report_json,
    run_method,
    run_to_dict,
    runs_to_csv,
    sweep_xi,
)
from .scenario import atomic_write_text, desk_scenario, load_scenario

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_PARTIAL = 0, 2, 3, 4
SYNTHETIC_PREFIX = "synthetic:"

log = logging.getLogger("vccopt")


def _load(args):
    """Scenario from a file, or ``synthetic:<kind>[:<n_jobs>]`` on the bundled 12-DC fleet."""
    spec = args.scenario
    if spec.startswith(SYNTHETIC_PREFIX):
        parts = spec[len(SYNTHETIC_PREFIX):].split(":")
        n_jobs = int(parts[1]) if len(parts) > 1 else 20
        sc = desk_scenario(parts[0], seed=args.seed, n_jobs=n_jobs)
    else:
        sc = load_scenario(spec)
    if args.params:
        try:
            overrides = json.loads(Path(args.params).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"{args.params}: {exc}") from None
        if not isinstance(overrides, dict):
            raise ParseError(f"{args.params}: expected a JSON object")
        unknown = sorted(set(overrides) - set(SOLVER_KEYS))
        if unknown:
            raise ValidationError(f"{args.params}: unknown solver parameters {unknown}")
        sc = sc.with_params(**overrides)
    try:
        config = SolverConfig.from_params(sc.params)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"solver parameters: {exc}") from None
    return sc, config


def _xi_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--xi expects comma-separated numbers, got {text!r}") from None


def cmd_validate(args) -> int:
    sc, _ = _load(args)
    print(f"ok: {sc.D} DCs, T={sc.T}, {sc.I} jobs, total volume {sc.volumes.sum():.6g}, "
          f"effective capacity {sc.x_max.sum():.6g}")
    return EXIT_OK


def cmd_solve(args) -> int:
    sc, config = _load(args)
    run = run_method(sc, "bilevel", config)
    out = Path(args.out)
    atomic_write_text(out / "solve.json", report_json({"kind": "solve", "run": run_to_dict(run, sc, args.timings)}))
    if "trace" in run.extra:
        atomic_write_text(out / "trace.csv", run.extra["trace"].to_csv(timings=args.timings))
    _summary(run)
    return EXIT_OK if run.status == "ok" else EXIT_SOLVER


def cmd_baseline(args) -> int:
    sc, config = _load(args)
    run = run_method(sc, args.method, config)
    atomic_write_text(Path(args.out) / f"baseline_{args.method}.json",
                      report_json({"kind": "baseline", "run": run_to_dict(run, sc, args.timings)}))
    _summary(run)
    return EXIT_OK if run.status == "ok" else EXIT_SOLVER


def cmd_sweep(args) -> int:
    sc, config = _load(args)
    try:
        runs = sweep_xi(sc, args.xi, args.method, config)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    atomic_write_text(Path(args.out) / "sweep.csv", runs_to_csv(runs, args.timings))
    for run in runs:
        _summary(run)
    failed = sum(r.status != "ok" for r in runs)
    if failed == len(runs):
        return EXIT_SOLVER
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_compare(args) -> int:
    sc, config = _load(args)
    report = compare_methods(sc, config)
    runs = list(report["runs"].values())
    out = Path(args.out)
    atomic_write_text(out / "compare.csv", runs_to_csv(runs, args.timings))
    atomic_write_text(out / "compare.json", report_json(comparison_payload(report, sc, args.timings)))
    for run in runs:
        _summary(run)
    failed = sum(r.status != "ok" for r in runs)
    if failed == len(runs):
        return EXIT_SOLVER
    return EXIT_PARTIAL if failed else EXIT_OK


def _summary(run) -> None:
    if run.status == "ok":
        m = run.metrics
        print(f"{run.method:<10} xi={run.xi:<10g} carbon/vol={m.carbon_per_volume:.6g} "
              f"peak={m.peak_price:.6g} waiting={m.waiting_total:.6g} fairness={m.fairness:.6g}")
    else:
        print(f"{run.method:<10} xi={run.xi:<10g} FAILED {run.error}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True,
                        help="scenario JSON file, or synthetic:<large|small|mixed>[:<n_jobs>]")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, default=0, help="seed for generated scenarios (default 0)")
    common.add_argument("--params", help="JSON file of solver parameters overriding the scenario's")
    common.add_argument("--timings", action="store_true",
                        help="record wall times in outputs (makes them run-dependent)")
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="vccopt", description="Co-design of VCCs and job allocations.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="bilevel solve").set_defaults(func=cmd_solve)
    p = sub.add_parser("baseline", parents=[common], help="naive or sequential baseline")
    p.add_argument("--method", choices=("naive", "sequential"), required=True)
    p.set_defaults(func=cmd_baseline)
    p = sub.add_parser("sweep", parents=[common], help="sweep the migration price")
    p.add_argument("--xi", type=_xi_list, required=True, help="comma-separated, nondecreasing")
    p.add_argument("--method", choices=("bilevel", "sequential"), default="bilevel")
    p.set_defaults(func=cmd_sweep)
    sub.add_parser("compare", parents=[common], help="bilevel vs baselines").set_defaults(func=cmd_compare)
    sub.add_parser("validate", parents=[common], help="check a scenario").set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except VccError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
