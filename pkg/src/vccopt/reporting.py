"""Experiment drivers (single solves, xi sweeps, method comparisons) and their CSV/JSON reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .baselines import naive_schedule, sequential_optimize
from .bilevel import OperatorObjectiveParams, StepSchedule, StopRule, run_big_hype
from .errors import VccError
from .game import DEFAULT_EPSILON, DEFAULT_LAMBDA_TOL
from .metrics import METRIC_FIELDS, MetricsBundle, compute_metrics
from .scenario import SCHEMA_VERSION, Scenario

log = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "xi") + METRIC_FIELDS + ("status", "wall_time_s")
METHODS = ("bilevel", "naive", "sequential")
SOLVER_KEYS = ("alpha0", "decay", "constant_step", "k_max", "tol_x", "lambda_tol", "epsilon",
               "p", "xi", "uniform_weight", "peak_weight", "fairness_ddof")


@dataclass
class SolverConfig:
    """Solver knobs read from a scenario's ``params`` section (plus overrides)."""

    alpha0: Optional[float] = None
    decay: float = 0.51
    constant_step: bool = False
    k_max: int = 500
    tol_x: float = 1e-5
    lambda_tol: float = DEFAULT_LAMBDA_TOL
    epsilon: float = DEFAULT_EPSILON
    p: int = 6
    xi: float = 0.0
    uniform_weight: float = 1.0
    peak_weight: float = 1.0
    fairness_ddof: int = 0

    @classmethod
    def from_params(cls, params: Dict, **overrides) -> "SolverConfig":
        merged = {k: v for k, v in dict(params).items() if k in SOLVER_KEYS}
        merged.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(merged) - set(SOLVER_KEYS)
        if unknown:
            raise ValueError(f"unknown solver parameters: {sorted(unknown)}")
        return cls(**merged)

    def objective_params(self, scenario: Scenario, xi: Optional[float] = None) -> OperatorObjectiveParams:
        return OperatorObjectiveParams(scenario.carbon_intensity, self.p, self.xi if xi is None else xi,
                                       self.uniform_weight, self.peak_weight)

    def schedule(self) -> StepSchedule:
        return StepSchedule(self.alpha0, self.decay, self.constant_step)

    def stop(self) -> StopRule:
        return StopRule(int(self.k_max), self.tol_x)


@dataclass
class MethodRun:
    method: str
    xi: float
    status: str
    metrics: Optional[MetricsBundle] = None
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    wall_time: float = 0.0
    error: str = ""
    extra: Dict = field(default_factory=dict)

    def row(self) -> Dict:
        out = {"method": self.method, "xi": self.xi, "status": self.status, "wall_time_s": self.wall_time}
        for name in METRIC_FIELDS:
            out[name] = getattr(self.metrics, name) if self.metrics is not None else None
        return out


def run_method(scenario: Scenario, method: str, config: Optional[SolverConfig] = None,
               xi: Optional[float] = None) -> MethodRun:
    """Run one method and score it; solver and validation errors become a failed run."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    config = config or SolverConfig.from_params(scenario.params)
    xi = config.xi if xi is None else float(xi)
    scored = scenario.with_params(p=config.p)
    t0 = time.perf_counter()
    try:
        if method == "bilevel":
            res = run_big_hype(scenario, config.objective_params(scenario, xi), config.schedule(), config.stop(),
                               config.epsilon, config.lambda_tol)
            x, y = res.x, res.equilibrium.y_star
            extra = {"iterations": len(res.trace.records) - 1, "best_k": res.trace.best_k,
                     "trace_status": res.trace.status, "phi_e": res.phi_e, "trace": res.trace}
        elif method == "naive":
            base = naive_schedule(scenario)
            x, y, extra = base.x_used, base.y, {}
        else:
            base = sequential_optimize(scenario, config.objective_params(scenario, xi), config.epsilon)
            x, y, extra = base.x_used, base.y, {}
        metrics = compute_metrics(scored, y, x, ddof=config.fairness_ddof)
    except VccError as exc:
        log.warning("%s (xi=%g) failed: %s", method, xi, exc)
        return MethodRun(method, xi, "failed", wall_time=time.perf_counter() - t0,
                         error=f"{type(exc).__name__}: {exc}")
    return MethodRun(method, xi, "ok", metrics, np.asarray(x), np.asarray(y), time.perf_counter() - t0,
                     extra=extra)


def sweep_xi(scenario: Scenario, xi_values: Sequence[float], method: str = "bilevel",
             config: Optional[SolverConfig] = None) -> List[MethodRun]:
    """One run per migration price; each bilevel run starts from a fresh x0. Failed rows are kept."""
    xi_values = [float(v) for v in xi_values]
    if not xi_values:
        raise ValueError("xi_values must be nonempty")
    if any(b < a for a, b in zip(xi_values, xi_values[1:])):
        raise ValueError("xi_values must be nondecreasing")
    if any(v < 0 for v in xi_values):
        raise ValueError("xi_values must be nonnegative")
    if method not in ("bilevel", "sequential"):
        raise ValueError(f"sweep method must be bilevel or sequential, got {method!r}")
    return [run_method(scenario, method, config, xi) for xi in xi_values]


def compare_methods(scenario: Scenario, config: Optional[SolverConfig] = None) -> Dict:
    """Run every method on the same scenario; report metrics, deltas and carbon savings per volume."""
    config = config or SolverConfig.from_params(scenario.params)
    runs = {m: run_method(scenario, m, config) for m in METHODS}
    report = {"runs": runs, "deltas": {}, "carbon_savings_per_volume": {}}
    bil = runs["bilevel"]
    for name in ("naive", "sequential"):
        other = runs[name]
        if bil.status != "ok" or other.status != "ok":
            report["deltas"][name] = None
            report["carbon_savings_per_volume"][name] = None
            continue
        report["deltas"][name] = {f: getattr(bil.metrics, f) - getattr(other.metrics, f) for f in METRIC_FIELDS}
        report["carbon_savings_per_volume"][name] = (other.metrics.carbon_per_volume
                                                     - bil.metrics.carbon_per_volume)
    return report


# ----------------------------------------------------------------------------
# serialization


def fmt_float(v) -> str:
    return "" if v is None else format(float(v), ".12g")


def runs_to_csv(runs: Sequence[MethodRun], timings: bool = False) -> str:
    """Fixed-column CSV; ``wall_time_s`` stays empty unless ``timings`` so outputs are reproducible."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for run in runs:
        row = run.row()
        out = []
        for col in CSV_COLUMNS:
            if col in ("method", "status"):
                out.append(row[col])
            elif col == "wall_time_s":
                out.append(fmt_float(row[col]) if timings else "")
            else:
                out.append(fmt_float(row[col]))
        w.writerow(out)
    return buf.getvalue()


def _clean(obj):
    """JSON-safe copy with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return None
        return float(format(v, ".12g"))
    return obj


def run_to_dict(run: MethodRun, scenario: Scenario, timings: bool = False, include_solution: bool = True) -> Dict:
    out = {
        "method": run.method,
        "xi": run.xi,
        "status": run.status,
        "metrics": run.metrics.as_dict() if run.metrics is not None else None,
        "wall_time_s": run.wall_time if timings else None,
    }
    if run.error:
        out["error"] = run.error
    for key in ("iterations", "best_k", "trace_status", "phi_e"):
        if key in run.extra:
            out[key] = run.extra[key]
    if include_solution and run.x is not None:
        out["x"] = np.asarray(run.x).reshape(scenario.D, scenario.T)
        out["y"] = run.y
    return out


def report_json(payload: Dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(payload)
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def comparison_payload(report: Dict, scenario: Scenario, timings: bool = False) -> Dict:
    return {
        "kind": "compare",
        "methods": {m: run_to_dict(r, scenario, timings) for m, r in report["runs"].items()},
        "deltas": report["deltas"],
        "carbon_savings_per_volume": report["carbon_savings_per_volume"],
    }


__all__ = [
    "CSV_COLUMNS",
    "METHODS",
    "MethodRun",
    "SolverConfig",
    "compare_methods",
    "comparison_payload",
    "report_json",
    "run_method",
    "run_to_dict",
    "runs_to_csv",
    "sweep_xi",
]
