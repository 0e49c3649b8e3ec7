"""DC operator problem: objective, feasible VCC set, and the projected hypergradient loop."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import EmptyX, NonFiniteObjective, SolverFailure
from .game import (
    DEFAULT_EPSILON,
    DEFAULT_LAMBDA_TOL,
    DecisionLayout,
    EquilibriumResult,
    GameMatrices,
    assemble_game,
    solve_game,
)
from .scenario import Scenario
from .sensitivity import compute_sensitivity

log = logging.getLogger(__name__)


@dataclass
class OperatorObjectiveParams:
    rho: np.ndarray
    p: int = 6
    xi: float = 0.0
    uniform_weight: float = 1.0
    peak_weight: float = 1.0  # 0 switches the peak-shaving term off

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if self.p < 2 or self.p % 2:
            raise ValueError(f"p must be an even integer >= 2, got {self.p}")
        if self.xi < 0 or self.uniform_weight < 0 or self.peak_weight < 0:
            raise ValueError("xi, uniform_weight and peak_weight must be nonnegative")

    @classmethod
    def from_scenario(cls, scenario: Scenario, **overrides) -> "OperatorObjectiveParams":
        params = {k: scenario.params[k] for k in ("p", "xi", "uniform_weight", "peak_weight") if k in scenario.params}
        params.update(overrides)
        return cls(scenario.carbon_intensity, **params)


@dataclass
class OperatorObjective:
    """Objective parameters bound to a decision layout."""

    params: OperatorObjectiveParams
    load_op: object  # sparse (n_x, n_y)
    migration_coef: np.ndarray  # tau_i * path price on off-home z entries, zero elsewhere

    @classmethod
    def build(cls, scenario: Scenario, matrices: GameMatrices, params: OperatorObjectiveParams) -> "OperatorObjective":
        layout = matrices.layout
        return cls(params, layout.load_operator(), migration_coefficients(scenario, layout))


def migration_coefficients(scenario: Scenario, layout: DecisionLayout) -> np.ndarray:
    """tau_i * path price on every off-home z entry of job i, zero elsewhere."""
    coef = np.zeros(layout.n_y)
    prices = scenario.path_prices
    for i, job in enumerate(scenario.jobs):
        home = layout.homes[i]
        for d in range(layout.D):
            if d == home:
                continue
            for t in range(layout.T - 1):
                coef[layout.z_index(i, d, t)] = job.priority * prices[home, d]
    return coef


def peak_term(load: np.ndarray, p: int) -> Tuple[float, np.ndarray]:
    """Sum over DCs of the p-norm of the load curve, and its gradient (D, T).

    Scaled by the per-DC maximum before powering so p = 6 stays finite for
    large loads. The gradient of an all-zero curve is taken as 0; curves at
    round-off level of the largest load count as zero, since the direction of
    such a curve is noise.
    """
    load = np.asarray(load, dtype=float)
    value = 0.0
    grad = np.zeros_like(load)
    floor = 1e-12 * (1.0 + np.abs(load).max(initial=0.0))
    for d in range(load.shape[0]):
        row = load[d]
        m = np.abs(row).max(initial=0.0)
        if m <= floor:
            continue
        u = row / m
        s = np.sum(u ** p)
        norm = m * s ** (1.0 / p)
        value += norm
        grad[d] = s ** (1.0 / p - 1.0) * u ** (p - 1)
    return value, grad


def phi(x, y, objective: OperatorObjective, components: bool = False):
    """Leader cost and its partial gradients (w.r.t. x and w.r.t. stacked y)."""
    prm = objective.params
    x = np.asarray(x, dtype=float).ravel()
    load_flat = objective.load_op @ y
    load = load_flat.reshape(prm.rho.shape)
    carb = float(prm.rho.ravel() @ load_flat)
    peak, g_peak = peak_term(load, prm.p)
    migr = float(objective.migration_coef @ y)
    unif = 0.5 * float(np.sum(x))
    value = carb + prm.peak_weight * peak + prm.xi * migr + prm.uniform_weight * unif
    grad1 = np.full(x.size, 0.5 * prm.uniform_weight)
    grad2 = objective.load_op.T @ (prm.rho.ravel() + prm.peak_weight * g_peak.ravel()) + prm.xi * objective.migration_coef
    if components:
        return value, grad1, grad2, {"carbon": carb, "peak": peak, "migration": migr, "uniform": unif}
    return value, grad1, grad2


def project_onto_X(x_raw, scenario: Scenario) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= ub, sum(x) >= total volume}.

    ``ub`` folds the first-step cap into the box. The KKT conditions give
    ``x = clip(x_raw + mu, 0, ub)`` with a scalar ``mu >= 0``; ``mu`` is found
    exactly by scanning the breakpoints of the piecewise-linear sum.
    """
    ub = scenario.upper_bounds().ravel()
    x_raw = np.asarray(x_raw, dtype=float).ravel()
    demand = float(scenario.volumes.sum())
    if ub.sum() < demand * (1 - 1e-12):
        raise EmptyX(f"capacity {ub.sum():.6g} below total demand {demand:.6g}")
    x = np.clip(x_raw, 0.0, ub)
    if x.sum() >= demand:
        return x
    # breakpoints of mu -> sum(clip(x_raw + mu, 0, ub))
    bps = np.unique(np.concatenate([-x_raw, ub - x_raw]))
    bps = bps[bps > 0]
    lo = 0.0
    f_lo = x.sum()
    for bp in bps:
        f_bp = np.clip(x_raw + bp, 0.0, ub).sum()
        if f_bp >= demand:
            break
        lo, f_lo = bp, f_bp
    else:
        return ub.copy()
    # the sum is affine between consecutive breakpoints
    mu = lo + (demand - f_lo) * (bp - lo) / (f_bp - f_lo)
    return np.clip(x_raw + mu, 0.0, ub)


def in_X(x, scenario: Scenario, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float).ravel()
    ub = scenario.upper_bounds().ravel()
    scale = 1.0 + np.abs(ub).max(initial=0.0)
    return bool(
        np.all(x >= -tol * scale)
        and np.all(x <= ub + tol * scale)
        and x.sum() >= scenario.volumes.sum() - tol * scale
    )


def hypergradient(grad1: np.ndarray, grad2: np.ndarray, s: np.ndarray) -> np.ndarray:
    return grad1 + s.T @ grad2


def initial_vcc(scenario: Scenario) -> np.ndarray:
    """Capacity-shaped start: upper bounds scaled to 105% of demand, projected onto X."""
    ub = scenario.upper_bounds().ravel()
    demand = scenario.volumes.sum()
    scale = min(1.0, 1.05 * demand / ub.sum()) if ub.sum() > 0 else 0.0
    return project_onto_X(ub * scale, scenario)


@dataclass
class StepSchedule:
    alpha0: Optional[float] = None  # None: 0.1 * ||x_max||_inf / (1 + ||grad^0||_inf)
    decay: float = 0.51
    constant: bool = False

    def resolve(self, scenario: Scenario, grad0: np.ndarray) -> float:
        if self.alpha0 is not None:
            return float(self.alpha0)
        return 0.1 * float(np.abs(scenario.x_max).max()) / (1.0 + float(np.abs(grad0).max()))

    def __call__(self, alpha0: float, k: int) -> float:
        return alpha0 if self.constant else alpha0 / (k + 1) ** self.decay


@dataclass
class StopRule:
    k_max: int = 500
    tol_x: float = 1e-5


@dataclass
class IterRecord:
    k: int
    x: np.ndarray
    phi_e: float
    grad_norm: float
    alpha: float
    step_norm: float
    qp_iterations: int
    wall_time: float


@dataclass
class SolverTrace:
    records: List[IterRecord] = field(default_factory=list)
    status: str = "running"
    best_k: int = 0

    def to_csv(self, include_x: bool = True, timings: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n_x = self.records[0].x.size if self.records else 0
        header = ["k", "phi_e", "grad_norm", "alpha", "step_norm", "qp_iterations", "wall_time_s"]
        if include_x:
            header += [f"x{j}" for j in range(n_x)]
        w.writerow(header)
        for r in self.records:
            row = [r.k, _fmt(r.phi_e), _fmt(r.grad_norm), _fmt(r.alpha), _fmt(r.step_norm),
                   r.qp_iterations, _fmt(r.wall_time) if timings else ""]
            if include_x:
                row += [_fmt(v) for v in r.x]
            w.writerow(row)
        return buf.getvalue()


def _fmt(v: float) -> str:
    return format(float(v), ".12g")


@dataclass
class BilevelResult:
    x: np.ndarray
    equilibrium: EquilibriumResult
    trace: SolverTrace
    phi_e: float
    matrices: GameMatrices
    objective: OperatorObjective


def run_big_hype(
    scenario: Scenario,
    params: Optional[OperatorObjectiveParams] = None,
    schedule: Optional[StepSchedule] = None,
    stop: Optional[StopRule] = None,
    epsilon: float = DEFAULT_EPSILON,
    lambda_tol: float = DEFAULT_LAMBDA_TOL,
    x0=None,
    matrices: Optional[GameMatrices] = None,
    callback: Optional[Callable[[IterRecord], None]] = None,
) -> BilevelResult:
    """Projected hypergradient descent on phi_e(x) = phi(x, y*(x)) over X.

    Each iteration takes a projected step along the current hypergradient,
    re-solves the allocation game at the new VCCs and differentiates it. The
    best iterate seen is returned. A SolverFailure after the first iterate
    ends the loop early (trace status ``solver_failure``) instead of
    discarding the progress made.
    """
    params = params or OperatorObjectiveParams.from_scenario(scenario)
    schedule = schedule or StepSchedule()
    stop = stop or StopRule()
    matrices = matrices or assemble_game(scenario, epsilon)
    objective = OperatorObjective.build(scenario, matrices, params)
    trace = SolverTrace()

    x = project_onto_X(initial_vcc(scenario) if x0 is None else x0, scenario)
    t0 = time.perf_counter()
    eq = solve_game(matrices, x, lambda_tol=lambda_tol)
    val, g1, g2 = phi(x, eq.y_star, objective)
    grad = hypergradient(g1, g2, compute_sensitivity(matrices, eq, x).jacobian_full)
    if not np.isfinite(val):
        trace.status = "nonfinite"
        raise NonFiniteObjective("phi_e not finite at x0", trace)
    alpha0 = schedule.resolve(scenario, grad)
    trace.records.append(IterRecord(0, x.copy(), val, float(np.linalg.norm(grad)), 0.0, 0.0,
                                    eq.qp_iterations, time.perf_counter() - t0))
    best = (val, x.copy(), eq, 0)
    if callback:
        callback(trace.records[-1])

    trace.status = "max_iter"
    for k in range(stop.k_max):
        alpha = schedule(alpha0, k)
        x_new = project_onto_X(x - alpha * grad, scenario)
        step = float(np.abs(x_new - x).max())
        x = x_new
        try:
            eq = solve_game(matrices, x, warm_start=eq, lambda_tol=lambda_tol)
        except SolverFailure as exc:
            # keep what was found so far; the trace records why the loop stopped
            log.warning("equilibrium solve failed at iteration %d: %s", k + 1, exc)
            trace.status = "solver_failure"
            break
        val, g1, g2 = phi(x, eq.y_star, objective)
        if not np.isfinite(val):
            trace.status = "nonfinite"
            raise NonFiniteObjective(f"phi_e not finite at iteration {k + 1}", trace)
        grad = hypergradient(g1, g2, compute_sensitivity(matrices, eq, x).jacobian_full)
        rec = IterRecord(k + 1, x.copy(), val, float(np.linalg.norm(grad)), alpha, step,
                         eq.qp_iterations, time.perf_counter() - t0)
        trace.records.append(rec)
        if callback:
            callback(rec)
        if val < best[0]:
            best = (val, x.copy(), eq, k + 1)
        if step <= stop.tol_x * (1.0 + float(np.abs(x).max())):
            trace.status = "converged"
            break

    trace.best_k = best[3]
    log.info("bilevel: %s after %d iterations, best phi_e %.6g at k=%d",
             trace.status, len(trace.records) - 1, best[0], best[3])
    return BilevelResult(best[1], best[2], trace, best[0], matrices, objective)


def phi_e(x, matrices: GameMatrices, objective: OperatorObjective) -> float:
    """Evaluate phi(x, y*(x)) with a fresh equilibrium solve."""
    eq = solve_game(matrices, x)
    return phi(x, eq.y_star, objective)[0]
