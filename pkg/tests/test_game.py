import numpy as np
import pytest
import scipy.io
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import random_feasible_x, random_scenario
from oracles import FullProblem
from vccopt.errors import Infeasible, InfeasibleAllocation, InfeasibleEqualities
from vccopt.fleet import DataCenterFleet
from vccopt.game import (
    allocation_residuals,
    assemble_cost,
    assemble_equalities,
    assemble_game,
    assemble_inequalities,
    build_layout,
    check_allocation,
    dump_debug,
    eliminate,
    implicit_equalities,
    solve_game,
)
from vccopt.scenario import ComputeJob, Scenario


def single_dc(jobs, T=2, cap=10.0):
    fleet = DataCenterFleet(1, (), (cap,))
    return Scenario(fleet, jobs, T, np.ones((1, T)), np.zeros((1, T)))


def two_dc(jobs, T=2, price=1.0):
    fleet = DataCenterFleet(2, ((1, 2, price),), (10.0, 10.0))
    return Scenario(fleet, jobs, T, np.ones((2, T)), np.zeros((2, T)))


@pytest.mark.parametrize("I, D, T, n_y", [(1, 2, 2, 6), (3, 12, 5, 324), (1, 1, 1, 1)])
def test_layout_size(I, D, T, n_y):
    fleet = DataCenterFleet(D, tuple((d, d + 1, 1.0) for d in range(1, D)), (100.0,) * D)
    jobs = [ComputeJob(i + 1, 1, 1.0, 1.0) for i in range(I)]
    sc = Scenario(fleet, jobs, T, np.ones((D, T)), np.zeros((D, T)))
    assert build_layout(sc).n_y == n_y


def test_row_counts_two_dc():
    sc = two_dc([ComputeJob(1, 1, 1.0, 1.0)])
    layout = build_layout(sc)
    A, b = assemble_equalities(sc, layout)
    G, h, H = assemble_inequalities(sc, layout)
    assert A.shape == (4, 6)
    assert G.shape == (10, 6) and H.shape == (10, 4)


def test_single_dc_rows():
    sc = single_dc([ComputeJob(1, 1, 1.0, 1.0)], T=4)
    A, _ = assemble_equalities(sc, build_layout(sc))
    assert A.shape[0] == 4


def test_all_at_home_first_step_satisfies_equalities():
    rng = np.random.default_rng(5)
    sc = random_scenario(rng, 3, 3, 3)
    layout = build_layout(sc)
    A, b = assemble_equalities(sc, layout)
    y = np.zeros(layout.n_y)
    for i, job in enumerate(sc.jobs):
        y[layout.y_index(i, job.home_dc - 1, 0)] = job.volume
    assert np.allclose(A @ y, b)


def test_coupling_row_shared_by_jobs():
    sc = single_dc([ComputeJob(1, 1, 1.0, 1.0), ComputeJob(2, 1, 1.0, 1.0)])
    layout = build_layout(sc)
    G, _, H = assemble_inequalities(sc, layout)
    row = G.toarray()[layout.n_y + 0]
    assert row[layout.y_index(0, 0, 0)] == 1 and row[layout.y_index(1, 0, 0)] == 1
    assert H.toarray()[layout.n_y + 0, 0] == 1


def test_zero_capacity_forces_zero_allocation():
    sc = single_dc([ComputeJob(1, 1, 1.0, 1.0)])
    with pytest.raises(InfeasibleAllocation):
        check_allocation(sc, np.array([1.0, 0.0, 0.0]), x=np.zeros(2))
    assert allocation_residuals(sc, np.zeros(3), x=np.zeros(2))["capacity"] == 0.0


def test_cost_coefficients():
    sc = Scenario(DataCenterFleet(2, ((1, 2, 2.0),), (10.0, 10.0)), [ComputeJob(1, 1, 1.0, 3.0)], 4,
                  np.ones((2, 4)), np.zeros((2, 4)))
    layout = build_layout(sc)
    q = assemble_cost(sc, layout)
    assert q[layout.y_index(0, 0, 1)] == pytest.approx(3 * 2 / 4)
    assert q[layout.z_index(0, 1, 0)] == pytest.approx(6.0)
    assert q[layout.z_index(0, 0, 2)] == 0.0
    sc2 = single_dc([ComputeJob(1, 1, 1.0, 2.0)], T=4)
    assert assemble_cost(sc2, build_layout(sc2))[1] == pytest.approx(1.0)


def test_eliminate_one_constraint():
    el = eliminate(np.array([[1.0, 1.0]]), np.array([1.0]), np.zeros((0, 2)), np.zeros(0))
    assert np.allclose(el.y_dagger, [0.5, 0.5])
    assert el.F_T.shape == (2, 1)
    assert abs(abs(el.F_T[:, 0] @ np.array([1, -1]) / np.sqrt(2)) - 1) < 1e-12


def test_eliminate_inconsistent():
    with pytest.raises(InfeasibleEqualities):
        eliminate(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([1.0, 2.0]), np.zeros((0, 2)), np.zeros(0))


def test_eliminate_drops_duplicates():
    el = eliminate(np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]]), np.array([1.0, 1.0]), np.zeros((0, 3)), np.zeros(0))
    assert el.rank == 1 and el.dropped_rows.tolist() == [1]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(2, 8), st.integers(0, 2**16))
def test_eliminate_residuals(m, n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    b = A @ rng.normal(size=n)
    el = eliminate(A, b, np.eye(n), np.zeros(n))
    assert np.abs(A @ el.F_T).max(initial=0) < 1e-9
    assert np.abs(A @ el.y_dagger - b).max() < 1e-9
    assert np.allclose(el.F_T.T @ el.F_T, np.eye(el.F_T.shape[1]))


def test_assembled_elimination():
    rng = np.random.default_rng(9)
    sc = random_scenario(rng, 3, 3, 4)
    m = assemble_game(sc)
    assert np.abs(m.A @ m.F_T).max() < 1e-10
    assert np.abs(m.A @ m.y_dagger - m.b).max() < 1e-10


def test_early_step_preferred():
    sc = single_dc([ComputeJob(1, 1, 1.0, 1.0)])
    eq = solve_game(assemble_game(sc), [1.0, 1.0])
    layout = build_layout(sc)
    assert layout.allocations(eq.y_star)[0, 0] == pytest.approx([1.0, 0.0], abs=1e-6)


def test_capacity_binds():
    sc = single_dc([ComputeJob(1, 1, 1.0, 1.0)])
    eq = solve_game(assemble_game(sc), [0.4, 1.0])
    alloc = build_layout(sc).allocations(eq.y_star)[0, 0]
    assert alloc == pytest.approx([0.4, 0.6], abs=1e-6)


def test_priority_order():
    sc = single_dc([ComputeJob(1, 1, 1.0, 4.0), ComputeJob(2, 1, 1.0, 1.0)])
    eq = solve_game(assemble_game(sc), [1.0, 1.0])
    alloc = build_layout(sc).allocations(eq.y_star)[:, 0]
    assert alloc == pytest.approx(np.array([[1.0, 0.0], [0.0, 1.0]]), abs=1e-6)


def test_migration_when_home_is_full():
    sc = two_dc([ComputeJob(1, 1, 2.0, 1.0)], T=2, price=0.1)
    eq = solve_game(assemble_game(sc), [2.0, 0.0, 0.0, 2.0])
    layout = build_layout(sc)
    alloc = layout.allocations(eq.y_star)[0]
    assert alloc == pytest.approx(np.array([[2.0, 0.0], [0.0, 0.0]]), abs=1e-6)
    eq = solve_game(assemble_game(sc), [1.0, 0.0, 0.0, 2.0])
    alloc = layout.allocations(eq.y_star)[0]
    assert alloc == pytest.approx(np.array([[1.0, 0.0], [0.0, 1.0]]), abs=1e-6)


def test_infeasible_capacity():
    sc = single_dc([ComputeJob(1, 1, 1.0, 1.0)])
    with pytest.raises(Infeasible):
        solve_game(assemble_game(sc), [0.2, 0.2])


def test_thin_set_solved():
    """Total VCC equal to total volume and zero entries: Y(x) has no interior."""
    rng = np.random.default_rng(17)
    sc = random_scenario(rng, 3, 3, 3)
    ub = sc.upper_bounds().ravel()
    x = ub * (sc.volumes.sum() / ub.sum())
    x[rng.choice(x.size, 2, replace=False)] = 0.0
    x *= sc.volumes.sum() / x.sum()
    m = assemble_game(sc)
    try:
        eq = solve_game(m, x)
    except Infeasible:
        pytest.skip("random thin instance happens to be empty")
    fp = FullProblem(sc, x, m.epsilon, m.y_dagger)
    assert fp.residuals(eq.y_star) < 1e-8
    assert fp.vi_gap(eq.y_star)[0] > -1e-8


def test_implicit_equalities_found():
    # y1 + y2 <= 1, -y1 - y2 <= -1, y1 <= 5: the first two always bind
    G = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, 0.0]])
    r = np.array([1.0, -1.0, 5.0])
    assert implicit_equalities(G, r).tolist() == [0, 1]


@pytest.mark.parametrize("seed", range(8))
def test_equilibrium_properties(seed):
    rng = np.random.default_rng(100 + seed)
    sc = random_scenario(rng, 3, 3, 3, inflexible=bool(seed % 2))
    x = random_feasible_x(rng, sc)
    m = assemble_game(sc)
    eq = solve_game(m, x)
    y = eq.y_star
    fp = FullProblem(sc, x, m.epsilon, m.y_dagger)
    layout = m.layout
    alloc = layout.allocations(y)
    assert np.allclose(alloc.sum(axis=(1, 2)), sc.volumes, rtol=1e-8)
    assert np.abs(m.A @ y - m.b).max() <= 1e-8 * sc.volumes.max()
    assert np.all(layout.load(y).ravel() <= x + 1e-6)
    gap, F = fp.vi_gap(y)
    assert gap >= -1e-6
    assert min(F @ (p - y) for p in fp.random_feasible(rng, 200, y)) >= -1e-6
    assert max(fp.best_response_gain(y, i) for i in range(sc.I)) < 1e-6
    y_direct = fp.direct_qp()
    assert abs(fp.objective(y) - fp.objective(y_direct)) <= 1e-6 * max(1.0, abs(fp.objective(y_direct)))


def test_warm_start_gives_same_answer():
    rng = np.random.default_rng(3)
    sc = random_scenario(rng, 3, 3, 3)
    m = assemble_game(sc)
    x = random_feasible_x(rng, sc)
    cold = solve_game(m, x)
    x2 = np.clip(x * (1 + 0.01 * rng.normal(size=x.size)), 0, sc.upper_bounds().ravel())
    if x2.sum() < sc.volumes.sum():
        x2 = x
    warm = solve_game(m, x2, warm_start=cold)
    ref = solve_game(m, x2)
    assert np.allclose(warm.y_star, ref.y_star, atol=1e-8)


def test_multipliers_are_nonnegative_and_complementary():
    rng = np.random.default_rng(4)
    sc = random_scenario(rng, 2, 3, 3)
    m = assemble_game(sc)
    eq = solve_game(m, random_feasible_x(rng, sc))
    assert eq.lam.min() >= 0
    assert np.abs(eq.lam * eq.slack).max() < 1e-8


def test_debug_dump(tmp_path):
    sc = single_dc([ComputeJob(1, 1, 1.0, 1.0)])
    m = assemble_game(sc)
    eq = solve_game(m, [0.4, 1.0])
    dump_debug(m, tmp_path, eq)
    assert np.allclose(scipy.io.mmread(str(tmp_path / "A.mtx")).toarray(), m.A.toarray())
    assert np.allclose(scipy.io.mmread(str(tmp_path / "y_star.mtx")).ravel(), eq.y_star)
