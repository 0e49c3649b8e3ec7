"""Jacobian of the equilibrium map x -> y*(x) from the QP's KKT differentials."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import NotSolved
from .game import EquilibriumResult, GameMatrices, solve_game


@dataclass
class SensitivityResult:
    jacobian_reduced: np.ndarray
    jacobian_full: np.ndarray
    active_rows: np.ndarray
    degenerate: bool
    residual: float = 0.0


def compute_sensitivity(matrices: GameMatrices, eq: EquilibriumResult, x=None) -> SensitivityResult:
    """Differentiate stationarity and the active constraints w.r.t. x.

    For active rows ``a`` the differentials satisfy

        eps * dyt + G_a' dlam_a = 0
        G_a dyt              = H_a dx

    With ``dlam = eps * w`` the system becomes ``[[I, G_a'], [G_a, 0]]`` and is
    independent of eps, so it stays well scaled for tiny regularization. One
    factorization serves every unit direction. Weakly active rows are left
    out; when they exist, or ``G_a`` is rank deficient, ``degenerate`` is set
    and the minimum-norm least-squares solution is used.
    """
    if eq.qp_status != "solved":
        raise NotSolved(f"equilibrium status is {eq.qp_status!r}")
    a = np.asarray(eq.active_set, dtype=int)
    n = matrices.n_reduced
    n_x = matrices.layout.n_x
    H_a = matrices.H_dense[a]
    degenerate = bool(eq.weakly_active.size)

    if a.size == 0:
        jac = np.zeros((n, n_x))
        return SensitivityResult(jac, matrices.F_T @ jac, a, degenerate)

    G_a = matrices.G_tilde[a]
    # rows with no x-dependence give zero right-hand sides; only nonzero H columns matter
    K = np.block([[np.eye(n), G_a.T], [G_a, np.zeros((a.size, a.size))]])
    rhs = np.vstack([np.zeros((n, n_x)), H_a])
    try:
        lu = scipy.linalg.lu_factor(K, check_finite=False)
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        if not np.all(np.isfinite(sol)) or np.abs(K @ sol - rhs).max() > 1e-9 * (1 + np.abs(sol).max()):
            raise np.linalg.LinAlgError("ill-conditioned active set")
    except (np.linalg.LinAlgError, ValueError, scipy.linalg.LinAlgWarning):
        degenerate = True
        # minimum-norm dyt in range(G_a') with G_a dyt = H_a dx
        sol_y = np.linalg.pinv(G_a, rcond=1e-10) @ H_a
        sol = np.vstack([sol_y, np.zeros((a.size, n_x))])
    jac = sol[:n]
    residual = float(np.abs(G_a @ jac - H_a).max(initial=0.0))
    return SensitivityResult(jac, matrices.F_T @ jac, a, degenerate, residual)


def finite_difference_jacobian(matrices: GameMatrices, x, h: float = 1e-5,
                               columns: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of ``y*(x)``, one column per coordinate of x (or per entry of ``columns``)."""
    x = np.asarray(x, dtype=float).ravel()
    cols = []
    for j in range(x.size) if columns is None else columns:
        e = np.zeros_like(x)
        e[j] = h
        y_plus = solve_game(matrices, x + e).y_star
        y_minus = solve_game(matrices, x - e).y_star
        cols.append((y_plus - y_minus) / (2 * h))
    return np.column_stack(cols) if cols else np.zeros((matrices.layout.n_y, 0))


def is_nondegenerate(matrices: GameMatrices, eq: EquilibriumResult, margin: float = 1e-4) -> bool:
    """Strict-complementarity screen used before comparing with finite differences.

    Only rows handed to the QP count; duplicates and constant rows are ignored.
    """
    rows = matrices.qp_rows
    active = np.intersect1d(eq.active_set, rows)
    inactive = np.setdiff1d(rows, eq.active_set)
    if active.size and eq.lam[active].min() <= margin:
        return False
    if inactive.size and eq.slack[inactive].min() <= margin:
        return False
    return True
