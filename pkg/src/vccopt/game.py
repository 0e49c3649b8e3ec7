"""Lower-level allocation game: assembly, variable elimination and the v-GNE solve.

The teams' game is an exact potential game, so its variational equilibrium is
the minimizer of the summed team costs

    J(y) = q'y + eps/2 * ||y - y_dagger||^2   s.t.  A y = b,  G y <= h + H x.

Substituting ``y = F_T @ yt + y_dagger`` with an orthonormal nullspace basis
``F_T`` leaves the inequality-constrained QP

    min  c'yt + eps/2 * ||yt||^2   s.t.  G_tilde yt <= h_tilde + H x,   c = F_T' q,

which is the same problem as minimizing ``||F_T yt + q/eps||^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import daqp
import quadprog
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import linprog, nnls
from scipy.sparse.csgraph import connected_components

from .errors import Infeasible, InfeasibleAllocation, InfeasibleEqualities, SolverFailure
from .scenario import Scenario

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 2e-8
DEFAULT_LAMBDA_TOL = 1e-7


@dataclass(frozen=True)
class DecisionLayout:
    """Index maps of the stacked decision vector.

    Job ``i`` owns a contiguous block: ``D*T`` allocation entries ``y[i, d, t]``
    followed by ``D*(T-1)`` migration/queue entries ``z[i, d, t]``. All indices
    here are 0-based.
    """

    I: int
    D: int
    T: int
    homes: Tuple[int, ...]

    @property
    def block_size(self) -> int:
        return self.D * self.T + self.D * (self.T - 1)

    @property
    def n_y(self) -> int:
        return self.I * self.block_size

    @property
    def n_x(self) -> int:
        return self.D * self.T

    def offset(self, i: int) -> int:
        return i * self.block_size

    def y_index(self, i: int, d: int, t: int) -> int:
        return self.offset(i) + d * self.T + t

    def z_index(self, i: int, d: int, t: int) -> int:
        if not 0 <= t < self.T - 1:
            raise IndexError(f"migration step {t} outside 0..{self.T - 2}")
        return self.offset(i) + self.D * self.T + d * (self.T - 1) + t

    def x_index(self, d: int, t: int) -> int:
        return d * self.T + t

    def block(self, i: int) -> slice:
        return slice(self.offset(i), self.offset(i + 1))

    def y_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_y, dtype=bool)
        for i in range(self.I):
            mask[self.offset(i): self.offset(i) + self.D * self.T] = True
        return mask

    def allocations(self, y: np.ndarray) -> np.ndarray:
        """View of the allocation part as an (I, D, T) array."""
        y = np.asarray(y)
        return np.stack([y[self.offset(i): self.offset(i) + self.D * self.T].reshape(self.D, self.T)
                         for i in range(self.I)]) if self.I else np.zeros((0, self.D, self.T))

    def migrations(self, y: np.ndarray) -> np.ndarray:
        """(I, D, T-1) array of z entries."""
        y = np.asarray(y)
        start = self.D * self.T
        return np.stack([y[self.offset(i) + start: self.offset(i + 1)].reshape(self.D, self.T - 1)
                         for i in range(self.I)]) if self.I else np.zeros((0, self.D, self.T - 1))

    def load(self, y: np.ndarray) -> np.ndarray:
        """Aggregate flexible load L[d, t] = sum_i y[i, d, t]."""
        return self.allocations(y).sum(axis=0)

    def load_operator(self) -> sp.csr_matrix:
        """Sparse S with S @ y == load(y).ravel()."""
        rows, cols = [], []
        for i in range(self.I):
            for d in range(self.D):
                for t in range(self.T):
                    rows.append(self.x_index(d, t))
                    cols.append(self.y_index(i, d, t))
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_x, self.n_y))


def build_layout(scenario: Scenario) -> DecisionLayout:
    return DecisionLayout(scenario.I, scenario.D, scenario.T, tuple(int(h) for h in scenario.homes))


def assemble_equalities(scenario: Scenario, layout: DecisionLayout) -> Tuple[sp.csr_matrix, np.ndarray]:
    D, T = layout.D, layout.T
    rows: List[dict] = []
    rhs: List[float] = []
    for i, job in enumerate(scenario.jobs):
        home = layout.homes[i]
        # total volume
        rows.append({layout.y_index(i, d, t): 1.0 for d in range(D) for t in range(T)})
        rhs.append(job.volume)
        # foreign execution at t+1 equals what was migrated at t
        for d in range(D):
            if d == home:
                continue
            for t in range(T - 1):
                rows.append({layout.y_index(i, d, t + 1): 1.0, layout.z_index(i, d, t): -1.0})
                rhs.append(0.0)
        # home queue: cumulative processed + migrated + queued == v
        for t in range(T - 1):
            row = {layout.z_index(i, home, t): 1.0}
            for ell in range(t + 1):
                row[layout.y_index(i, home, ell)] = 1.0
                for j in range(D):
                    if j != home:
                        row[layout.z_index(i, j, ell)] = 1.0
            rows.append(row)
            rhs.append(job.volume)
        # data sits at home during the first step
        for d in range(D):
            if d != home:
                rows.append({layout.y_index(i, d, 0): 1.0})
                rhs.append(0.0)
    data, ri, ci = [], [], []
    for r, row in enumerate(rows):
        for c, v in row.items():
            ri.append(r)
            ci.append(c)
            data.append(v)
    A = sp.csr_matrix((data, (ri, ci)), shape=(len(rows), layout.n_y))
    return A, np.asarray(rhs, dtype=float)


def assemble_inequalities(scenario: Scenario, layout: DecisionLayout) -> Tuple[sp.csr_matrix, np.ndarray, sp.csr_matrix]:
    """Nonnegativity rows first (n_y of them), then one capacity row per (d, t)."""
    n_y, n_x = layout.n_y, layout.n_x
    S = layout.load_operator()
    G = sp.vstack([-sp.identity(n_y, format="csr"), S], format="csr")
    h = np.zeros(n_y + n_x)
    H = sp.vstack([sp.csr_matrix((n_y, n_x)), sp.identity(n_x, format="csr")], format="csr")
    return G, h, H


def assemble_cost(scenario: Scenario, layout: DecisionLayout) -> np.ndarray:
    q = np.zeros(layout.n_y)
    prices = scenario.path_prices
    for i, job in enumerate(scenario.jobs):
        home = layout.homes[i]
        for d in range(layout.D):
            for t in range(layout.T):
                q[layout.y_index(i, d, t)] = job.priority * (t + 1) / layout.T
            if d != home:
                for t in range(layout.T - 1):
                    q[layout.z_index(i, d, t)] = job.priority * prices[home, d]
    return q


@dataclass
class Elimination:
    F_T: np.ndarray
    y_dagger: np.ndarray
    G_tilde: np.ndarray
    h_tilde: np.ndarray
    rank: int
    dropped_rows: np.ndarray


def _independent_rows(A: np.ndarray) -> np.ndarray:
    if A.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, R, piv = scipy.linalg.qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.zeros(0, dtype=int)
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    return np.sort(piv[:rank])


def eliminate(A, b, G, h, q=None) -> Elimination:
    """Nullspace elimination of ``A y = b``.

    Decoupled column blocks (one per job for assembled games) are factored
    separately, which keeps ``F_T`` block diagonal.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    graph = sp.bmat([[None, A], [A.T, None]]).tocsr() if m else sp.csr_matrix((n, n))
    _, labels = connected_components(graph, directed=False) if m else (None, np.arange(n))
    row_labels = labels[:m] if m else np.zeros(0, dtype=int)
    col_labels = labels[m:] if m else labels

    F_T = np.zeros((n, 0))
    blocks_F = []
    y_dagger = np.zeros(n)
    dropped: List[int] = []
    rank_total = 0
    for lab in np.unique(col_labels):
        cols = np.flatnonzero(col_labels == lab)
        rws = np.flatnonzero(row_labels == lab)
        sub = A[rws][:, cols].toarray() if rws.size else np.zeros((0, cols.size))
        keep = _independent_rows(sub)
        dropped.extend(rws[np.setdiff1d(np.arange(rws.size), keep)].tolist())
        sub_k = sub[keep]
        if sub_k.shape[0]:
            U, s, Vt = np.linalg.svd(sub_k)
            r = int(np.sum(s > 1e-10 * s[0]))
            y_dagger[cols] = Vt[:r].T @ ((U[:, :r].T @ b[rws[keep]]) / s[:r])
            null = Vt[r:].T
        else:
            r = 0
            null = np.eye(cols.size)
        rank_total += r
        block = np.zeros((n, null.shape[1]))
        block[cols] = null
        blocks_F.append(block)
    if blocks_F:
        F_T = np.hstack(blocks_F)
    if dropped:
        log.warning("dropped %d linearly dependent equality rows", len(dropped))

    resid = A @ y_dagger - b
    if np.max(np.abs(resid), initial=0.0) > 1e-8 * (1.0 + np.max(np.abs(b), initial=0.0)):
        raise InfeasibleEqualities(f"A y = b inconsistent, residual {np.max(np.abs(resid)):.3e}")

    G = sp.csr_matrix(G)
    G_tilde = np.asarray(G @ F_T)
    h_tilde = np.asarray(h, dtype=float) - G @ y_dagger
    return Elimination(F_T, y_dagger, G_tilde, h_tilde, rank_total, np.asarray(sorted(dropped), dtype=int))


@dataclass
class GameMatrices:
    layout: DecisionLayout
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    H: sp.csr_matrix
    q: np.ndarray
    F_T: np.ndarray
    y_dagger: np.ndarray
    G_tilde: np.ndarray
    h_tilde: np.ndarray
    epsilon: float
    # rows handed to the QP backend: nonzero, one representative per duplicate group
    qp_rows: np.ndarray = field(repr=False, default=None)
    zero_rows: np.ndarray = field(repr=False, default=None)
    representative: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.H_dense = np.asarray(self.H.todense())
        self.c = self.F_T.T @ self.q
        if self.qp_rows is None:
            self._index_rows()

    @property
    def y_hat(self) -> np.ndarray:
        return self.y_dagger

    @property
    def n_reduced(self) -> int:
        return self.F_T.shape[1]

    def _index_rows(self):
        M = np.hstack([self.G_tilde, self.h_tilde[:, None], self.H_dense])
        scale = np.maximum(1.0, np.abs(M).max(initial=0.0))
        norms = np.abs(self.G_tilde).max(axis=1, initial=0.0)
        zero = norms <= 1e-12 * scale
        keyed = np.round(M / scale, 9) + 0.0
        seen = {}
        rep = np.arange(M.shape[0])
        for k in np.flatnonzero(~zero):
            key = keyed[k].tobytes()
            if key in seen:
                rep[k] = seen[key]
            else:
                seen[key] = k
        self.zero_rows = np.flatnonzero(zero)
        self.qp_rows = np.array(sorted(seen.values()), dtype=int)
        self.representative = rep

    def rhs(self, x: np.ndarray) -> np.ndarray:
        return self.h_tilde + self.H_dense @ np.asarray(x, dtype=float).ravel()

    def lift(self, y_tilde: np.ndarray) -> np.ndarray:
        return self.F_T @ y_tilde + self.y_dagger

    def objective(self, y: np.ndarray) -> float:
        """Potential function: sum of all team costs."""
        dev = y - self.y_dagger
        return float(self.q @ y + 0.5 * self.epsilon * dev @ dev)

    def pseudo_gradient(self, y: np.ndarray) -> np.ndarray:
        """Stacked gradients of each team's cost w.r.t. its own decisions."""
        return self.q + self.epsilon * (y - self.y_dagger)


def assemble_game(scenario: Scenario, epsilon: float = DEFAULT_EPSILON) -> GameMatrices:
    layout = build_layout(scenario)
    A, b = assemble_equalities(scenario, layout)
    G, h, H = assemble_inequalities(scenario, layout)
    q = assemble_cost(scenario, layout)
    el = eliminate(A, b, G, h, q)
    return GameMatrices(layout, A, b, G, h, H, q, el.F_T, el.y_dagger, el.G_tilde, el.h_tilde, float(epsilon))


def allocation_residuals(scenario: Scenario, y, x=None) -> dict:
    """Worst violations of the allocation constraints at ``y`` (x defaults to x_max).

    Keys: ``equality`` (conservation, migration and queue rows), ``nonneg`` and
    ``capacity``; all are >= 0 and zero for an exactly feasible point.
    """
    layout = build_layout(scenario)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != layout.n_y:
        raise InfeasibleAllocation(f"allocation has {y.size} entries, expected {layout.n_y}")
    x = scenario.x_max.ravel() if x is None else np.asarray(x, dtype=float).ravel()
    A, b = assemble_equalities(scenario, layout)
    return {
        "equality": float(np.abs(A @ y - b).max(initial=0.0)),
        "nonneg": float(np.maximum(-y, 0.0).max(initial=0.0)),
        "capacity": float(np.maximum(layout.load_operator() @ y - x, 0.0).max(initial=0.0)),
    }


def check_allocation(scenario: Scenario, y, x=None, tol: float = 1e-6) -> None:
    """Raise InfeasibleAllocation unless every residual is within ``tol`` (scaled by the volumes)."""
    res = allocation_residuals(scenario, y, x)
    scale = 1.0 + float(scenario.volumes.max(initial=0.0))
    bad = {k: v for k, v in res.items() if v > tol * scale}
    if bad:
        detail = ", ".join(f"{k}={v:.3g}" for k, v in bad.items())
        raise InfeasibleAllocation(f"allocation violates constraints: {detail}")


@dataclass
class EquilibriumResult:
    y_star: np.ndarray
    y_tilde_star: np.ndarray
    lam: np.ndarray
    active_set: np.ndarray
    qp_status: str
    objective_value: float
    x: np.ndarray
    slack: np.ndarray
    weakly_active: np.ndarray
    lambda_tol: float
    polished: bool = True
    warm_started: bool = False
    qp_iterations: int = 0


def _certify_infeasible(Gk: np.ndarray, rk: np.ndarray) -> bool:
    n = Gk.shape[1]
    res = linprog(np.zeros(n), A_ub=Gk, b_ub=rk, bounds=[(None, None)] * n, method="highs")
    return res.status == 2


class _Kkt:
    """Exact solve of the equality-constrained QP on a working set.

    Returns ``(y_tilde, lam)`` with ``lam`` over all QP rows, or None when the
    working set does not yield a KKT point of the full problem.
    """

    def __init__(self, c: np.ndarray, eps: float, Gk: np.ndarray, rk: np.ndarray):
        self.c, self.eps, self.Gk, self.rk = c, eps, Gk, rk
        self.scale_r = 1.0 + np.max(np.abs(rk), initial=0.0)
        self.scale_c = 1.0 + np.max(np.abs(c), initial=0.0)

    def _multipliers(self, GW, target, Qr, Rr, basis, lam_hint, W):
        """Nonnegative lam_W with GW' lam_W = target, cheapest candidate first.

        Degenerate working sets are rank deficient and the basic solution on
        the pivoted rows may be negative. A nearby nonnegative guess (backend
        or previous multipliers, else an LP solution) is then corrected by
        least squares on its own support. nnls is the last resort.
        """
        tol = -1e-10 * self.scale_c
        lam_W = np.zeros(GW.shape[0])
        lam_W[basis] = scipy.linalg.solve_triangular(Rr, Qr.T @ target)
        if lam_W.min() >= tol:
            return lam_W
        if lam_hint is not None:
            lam_W = self._correct(GW, target, np.asarray(lam_hint, dtype=float)[W])
            if lam_W is not None:
                return lam_W
        res = linprog(np.ones(GW.shape[0]), A_eq=GW.T, b_eq=target, bounds=(0, None), method="highs")
        if res.status == 0:
            lam_W = self._correct(GW, target, res.x)
            if lam_W is not None:
                return lam_W
        lam_W, _ = nnls(GW.T, target, maxiter=50 * GW.shape[0])
        return lam_W

    def _correct(self, GW, target, guess):
        guess = np.maximum(guess, 0.0)
        support = np.flatnonzero(guess > 1e-9 * (1.0 + guess.max(initial=0.0)))
        if support.size == 0:
            return None
        fix = scipy.linalg.lstsq(GW[support].T, target - GW.T @ guess, lapack_driver="gelsy")[0]
        lam_W = guess.copy()
        lam_W[support] += fix
        if lam_W.min() < -1e-10 * self.scale_c:
            return None
        if np.max(np.abs(GW.T @ lam_W - target)) > 1e-9 * self.scale_c:
            return None
        return lam_W

    def solve(self, W: np.ndarray, lam_hint=None):
        """``lam_hint``: unscaled multipliers over all QP rows, used only as a starting guess."""
        c, eps = self.c, self.eps
        W = np.asarray(W, dtype=int)
        lam = np.zeros(self.Gk.shape[0])
        if W.size == 0:
            yt = -c / eps
            if not self._primal_ok(yt):
                return None
        else:
            GW = self.Gk[W]
            Q, R, piv = scipy.linalg.qr(GW.T, pivoting=True)
            diag = np.abs(np.diag(R))
            r = int(np.sum(diag > 1e-10 * diag[0]))
            Qr, Rr = Q[:, :r], R[:r, :r]
            # min-norm point of the independent rows, then the tie-break along the face
            range_part = Qr @ scipy.linalg.solve_triangular(Rr, self.rk[W][piv[:r]], trans="T")
            N = Q[:, r:]
            # null-space part of c is O(eps) at a solution; dividing recovers the O(1) tie-break
            yt = range_part - N @ (N.T @ c) / eps
            if np.max(np.abs(GW @ yt - self.rk[W])) > 1e-9 * self.scale_r:
                return None
            if not self._primal_ok(yt):
                return None
            target = -(c + eps * yt)
            lam_W = self._multipliers(GW, target, Qr, Rr, piv[:r], lam_hint, W)
            if np.max(np.abs(GW.T @ lam_W - target)) > 1e-9 * self.scale_c:
                return None
            lam[W] = np.maximum(lam_W, 0.0)
        return yt, lam

    def _primal_ok(self, yt) -> bool:
        viol = self.Gk @ yt - self.rk
        return bool(viol.max(initial=-np.inf) <= 1e-7 * self.scale_r)


def _daqp(Gk, rk, c, eps, active=None):
    n, m = c.size, rk.size
    sense = np.zeros(m, dtype=np.int32)
    if active is not None and len(active):
        sense[np.asarray(active, dtype=int)] = 1
    # a loose primal tolerance only affects which working set is returned; the
    # exact KKT re-solve decides acceptance. Tight values make DAQP report
    # infeasibility on thin sets, where dependent rows carry round-off.
    tol = 1e-5 * (1.0 + np.max(np.abs(rk), initial=0.0))
    x, _, flag, info = daqp.solve(np.eye(n), c / eps, Gk, rk, np.full(m, -1e30), sense, primal_tol=tol)
    return np.asarray(x), flag, np.asarray(info["lam"]), int(info.get("iterations", 0))


def implicit_equalities(Gk: np.ndarray, rk: np.ndarray) -> np.ndarray:
    """Rows of ``Gk y <= rk`` that hold with equality at every feasible point.

    One LP (Freund, Roundy and Todd): maximize sum(s) subject to
    ``Gk y + s <= theta rk``, ``0 <= s <= 1``, ``theta >= 1``; a row is always
    active exactly when its ``s`` is zero at the optimum.
    """
    n, m = Gk.shape[1], rk.size
    A = sp.hstack([sp.csr_matrix(Gk), sp.identity(m), sp.csr_matrix(-rk[:, None])], format="csr")
    cost = np.r_[np.zeros(n), -np.ones(m), 0.0]
    bounds = [(None, None)] * n + [(0.0, 1.0)] * m + [(1.0, None)]
    for method in ("highs-ds", "highs-ipm"):
        res = linprog(cost, A_ub=A, b_ub=np.zeros(m), bounds=bounds, method=method)
        if res.status == 0:
            return np.flatnonzero(res.x[n:n + m] < 0.5)
    raise SolverFailure(f"implicit-equality LP failed: {res.message}")


def _solve_on_affine_hull(kkt: _Kkt, Gk, rk, c, eps):
    """Solve with the implicit equalities eliminated, so the remaining rows have a Slater point.

    A thin feasible set (total VCC equal to total demand, or zero VCC entries)
    has no interior; active-set backends then misreport infeasibility.
    """
    try:
        E = implicit_equalities(Gk, rk)
    except SolverFailure as exc:
        log.debug("%s", exc)
        return None
    if E.size == 0:
        return None
    Q, R, piv = scipy.linalg.qr(Gk[E].T, pivoting=True)
    diag = np.abs(np.diag(R))
    r = int(np.sum(diag > 1e-10 * diag[0]))
    y0 = Q[:, :r] @ scipy.linalg.solve_triangular(R[:r, :r], rk[E][piv[:r]], trans="T")
    N = Q[:, r:]
    rest = np.setdiff1d(np.arange(rk.size), E)
    Gw = Gk[rest] @ N
    rw = rk[rest] - Gk[rest] @ y0
    keep = np.abs(Gw).max(axis=1, initial=0.0) > 1e-12
    if N.shape[1] == 0 or not keep.any():
        return kkt.solve(E), 0
    _, flag, lam, its = _daqp(Gw[keep], rw[keep], N.T @ c, eps)
    if flag < 1:
        return None
    sol = kkt.solve(np.sort(np.r_[E, rest[keep][lam > 0]]))
    return (sol, its) if sol is not None else None


def _backend_solve(kkt: _Kkt, Gk, rk, c, eps, hint=None):
    """DAQP (hinted, then cold), then the affine-hull reduction, then quadprog.

    Every backend sees the problem divided by eps (identity Hessian); the
    working set it returns is re-solved exactly by ``kkt``.
    """
    failures = []
    candidate = None
    iterations = 0
    for start in ([hint] if hint is not None else []) + [None]:
        x_d, flag, lam, its = _daqp(Gk, rk, c, eps, start)
        iterations += its
        if flag < 1:
            failures.append(f"daqp exit flag {flag}")
            continue
        sol = kkt.solve(np.flatnonzero(lam > 0), lam * eps)
        if sol is not None:
            return sol, iterations, True
        if candidate is None:
            candidate = (x_d, np.maximum(lam, 0.0) * eps)
    reduced = _solve_on_affine_hull(kkt, Gk, rk, c, eps)
    if reduced is not None:
        return reduced[0], iterations + reduced[1], True
    failures.append("affine-hull reduction did not certify a KKT point")
    n = c.size
    try:
        x_q, _, _, its, lagr, iact = quadprog.solve_qp(np.eye(n), -c / eps, -Gk.T, -rk, 0)
    except ValueError as exc:
        failures.append(f"quadprog: {exc}")
    else:
        sol = kkt.solve(np.sort(iact[iact > 0] - 1))
        if sol is None:
            sol = kkt.solve(np.flatnonzero(lagr > 0))
        if sol is not None:
            return sol, iterations + int(its[0]), True
        if candidate is None:
            candidate = (x_q, np.maximum(lagr, 0.0) * eps)
    if candidate is not None:
        log.debug("exact KKT re-solve rejected; keeping backend solution")
        return candidate, iterations, False
    if _certify_infeasible(Gk, rk):
        raise Infeasible("allocation set Y(x) is empty for the given capacities")
    raise SolverFailure("; ".join(failures))


def solve_game(
    matrices: GameMatrices,
    x,
    warm_start: Optional[EquilibriumResult] = None,
    lambda_tol: float = DEFAULT_LAMBDA_TOL,
) -> EquilibriumResult:
    """Compute the unique v-GNE ``y*(x)`` via the eliminated QP.

    The QP backend (DAQP, with quadprog as fallback) supplies a working set;
    the point is then recomputed exactly from the KKT conditions on that set,
    which removes the round-off the backend accumulates from the 1/eps scaling.
    A warm start re-tries the previous active set first; the result is only
    accepted when it passes the full KKT check, so correctness never depends
    on it.
    """
    x = np.asarray(x, dtype=float).ravel()
    m = matrices
    r_all = m.rhs(x)
    scale_r = 1.0 + np.max(np.abs(r_all), initial=0.0)
    if m.zero_rows.size and r_all[m.zero_rows].min() < -1e-9 * scale_r:
        raise Infeasible("capacity vector makes a constant constraint infeasible (negative x entry?)")

    rows = m.qp_rows
    Gk = m.G_tilde[rows]
    rk = r_all[rows]
    c, eps = m.c, m.epsilon
    kkt = _Kkt(c, eps, Gk, rk)

    sol = None
    warm = False
    polished = True
    iterations = 0
    hint = None
    if warm_start is not None and warm_start.active_set.size:
        pos = {int(k): j for j, k in enumerate(rows)}
        strong = [pos[int(k)] for k in warm_start.active_set if int(k) in pos]
        weak = [pos[int(k)] for k in warm_start.weakly_active if int(k) in pos]
        lam_prev = warm_start.lam[rows] if warm_start.lam.size == m.G_tilde.shape[0] else None
        for guess in (strong, strong + weak) if weak else (strong,):
            sol = kkt.solve(np.array(sorted(guess), dtype=int), lam_prev)
            if sol is not None:
                break
        warm = sol is not None
        hint = np.array(sorted(strong), dtype=int)
    if sol is None and rows.size == 0:
        sol = kkt.solve(np.zeros(0, dtype=int))
    if sol is None:
        sol, iterations, polished = _backend_solve(kkt, Gk, rk, c, eps, hint)
    yt, lam_rows = sol

    lam = np.zeros(m.G_tilde.shape[0])
    lam[rows] = lam_rows
    slack = r_all - m.G_tilde @ yt
    thresh = lambda_tol * (1.0 + np.max(lam, initial=0.0))
    active = np.flatnonzero(lam > thresh)
    in_qp = np.zeros(lam.size, dtype=bool)
    in_qp[rows] = True
    weak = np.flatnonzero(in_qp & (np.abs(slack) <= 1e-9 * scale_r) & (lam <= thresh))
    y = m.lift(yt)
    return EquilibriumResult(
        y_star=y,
        y_tilde_star=yt,
        lam=lam,
        active_set=active,
        qp_status="solved",
        objective_value=m.objective(y),
        x=x.copy(),
        slack=slack,
        weakly_active=weak,
        lambda_tol=lambda_tol,
        polished=polished,
        warm_started=warm,
        qp_iterations=iterations,
    )


def dump_debug(matrices: GameMatrices, directory, eq: Optional[EquilibriumResult] = None) -> None:
    """Write problem data (and optionally a solution) as Matrix Market files.

    One file per array: ``A.mtx b.mtx G.mtx h.mtx H.mtx q.mtx`` plus
    ``y_star.mtx lam.mtx x.mtx active_set.mtx`` when ``eq`` is given. Vectors
    are stored as dense n-by-1 arrays; 1-based indices follow the format.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    items = {"A": matrices.A, "G": matrices.G, "H": matrices.H}
    for name, mat in items.items():
        scipy.io.mmwrite(str(directory / f"{name}.mtx"), sp.coo_matrix(mat))
    vectors = {"b": matrices.b, "h": matrices.h, "q": matrices.q}
    if eq is not None:
        vectors.update(y_star=eq.y_star, lam=eq.lam, x=eq.x, active_set=eq.active_set.astype(float) + 1)
    for name, vec in vectors.items():
        scipy.io.mmwrite(str(directory / f"{name}.mtx"), np.asarray(vec, dtype=float).reshape(-1, 1))
