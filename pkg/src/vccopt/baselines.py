"""Comparison schemes: greedy priority scheduling and two-step (VCC first, then allocation) optimization."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import cvxpy as cp
import numpy as np

from .bilevel import OperatorObjectiveParams, peak_term, project_onto_X
from .errors import Infeasible, SolverFailure
from .game import DEFAULT_EPSILON, EquilibriumResult, assemble_game, build_layout, solve_game
from .metrics import MetricsBundle, compute_metrics
from .scenario import Scenario

log = logging.getLogger(__name__)


@dataclass
class BaselineResult:
    label: str
    x_used: np.ndarray
    y: np.ndarray
    metrics: MetricsBundle
    equilibrium: Optional[EquilibriumResult] = None
    step1_iterations: int = 0


def naive_schedule(scenario: Scenario) -> BaselineResult:
    """Greedy fill at full capacity, highest priority first, each job at its home DC only.

    A job takes the earliest steps with spare capacity; whatever does not fit
    waits in the home queue for the next step.
    """
    layout = build_layout(scenario)
    x_max = scenario.x_max
    spare = x_max.copy()
    y = np.zeros(layout.n_y)
    order = sorted(range(scenario.I), key=lambda i: (-scenario.jobs[i].priority, scenario.jobs[i].id))
    for i in order:
        job = scenario.jobs[i]
        d = layout.homes[i]
        left = job.volume
        for t in range(layout.T):
            take = min(left, max(spare[d, t], 0.0))
            y[layout.y_index(i, d, t)] = take
            spare[d, t] -= take
            left -= take
            if t < layout.T - 1:
                y[layout.z_index(i, d, t)] = left
        if left > 1e-9 * (1.0 + job.volume):
            raise Infeasible(
                f"job {job.id} does not fit at home DC {job.home_dc}: {left:.6g} of {job.volume:.6g} left over"
            )
    x_used = x_max.ravel().copy()
    return BaselineResult("naive", x_used, y, compute_metrics(scenario, y, x_used))


def surrogate_objective(x, rho: np.ndarray, p: int, peak_weight: float = 1.0):
    """Worst-case leader cost with loads replaced by the VCCs, and its gradient."""
    X = np.asarray(x, dtype=float).reshape(rho.shape)
    peak, g_peak = peak_term(X, p)
    return float(np.sum(rho * X)) + peak_weight * peak, (rho + peak_weight * g_peak).ravel()


def minimize_surrogate(scenario: Scenario, params: OperatorObjectiveParams, tol: float = 1e-6):
    """Minimize the surrogate over X as a conic program (p-norms as power cones).

    The optimum often empties whole DCs, where the p-norm has a kink, so a
    first-order method stalls; an interior-point solve does not. The result
    is pulled back into X by the exact projection to remove solver slack.
    Returns ``(x, value, iterations)``.
    """
    rho, p = params.rho, params.p
    D, T = rho.shape
    ub = scenario.upper_bounds()
    X = cp.Variable((D, T), nonneg=True)
    cost = cp.sum(cp.multiply(rho, X))
    if params.peak_weight > 0:
        cost = cost + params.peak_weight * cp.sum(cp.hstack([cp.pnorm(X[d, :], p) for d in range(D)]))
    prob = cp.Problem(cp.Minimize(cost), [X <= ub, cp.sum(X) >= float(scenario.volumes.sum())])
    try:
        prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol * 1e-3, tol_gap_rel=tol * 1e-3, tol_feas=1e-10)
    except cp.SolverError as exc:
        raise SolverFailure(f"surrogate program failed: {exc}") from exc
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or X.value is None:
        raise SolverFailure(f"surrogate program status {prob.status}")
    x = project_onto_X(np.asarray(X.value).ravel(), scenario)
    value, _ = surrogate_objective(x, rho, p, params.peak_weight)
    return x, value, int(prob.solver_stats.num_iters or 0)


def sequential_optimize(scenario: Scenario, params: Optional[OperatorObjectiveParams] = None,
                        epsilon: float = DEFAULT_EPSILON, tol: float = 1e-6) -> BaselineResult:
    """Step 1: VCCs minimizing the worst-case surrogate (no migration term). Step 2: y*(x) under them."""
    params = params or OperatorObjectiveParams.from_scenario(scenario)
    x_bar, _, its = minimize_surrogate(scenario, params, tol)
    matrices = assemble_game(scenario, epsilon)
    eq = solve_game(matrices, x_bar)
    metrics = compute_metrics(scenario, eq.y_star, x_bar)
    return BaselineResult("sequential", x_bar, eq.y_star, metrics, eq, its)
