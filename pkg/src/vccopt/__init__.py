"""Joint design of data-center virtual capacity curves and compute-job allocations.

The operator picks per-DC, per-step capacity curves; compute teams answer with
an equilibrium allocation. The package assembles that allocation game as a
quadratic program, differentiates its solution with respect to the curves and
runs projected hypergradient descent on the operator's carbon and peak cost.
"""

from .baselines import BaselineResult, naive_schedule, sequential_optimize
from .bilevel import (
    BilevelResult,
    OperatorObjectiveParams,
    SolverTrace,
    StepSchedule,
    StopRule,
    hypergradient,
    phi,
    project_onto_X,
    run_big_hype,
)
from .errors import (
    VccError,
    ValidationError,
    DisconnectedGraph,
    InvalidEdgeEndpoint,
    NegativePrice,
    ParseError,
    MissingColumn,
    TooFewRows,
    NegativeIntensity,
    AmplitudeOutOfRange,
    BudgetInfeasible,
    InfeasibleEqualities,
    SolverError,
    Infeasible,
    SolverFailure,
    NotSolved,
    EmptyX,
    NonFiniteObjective,
    InfeasibleAllocation,
)
from .fleet import DataCenterFleet, MigrationPath, shortest_paths_from, validate_fleet
from .game import EquilibriumResult, GameMatrices, assemble_game, check_allocation, eliminate, solve_game
from .metrics import MetricsBundle, compute_metrics
from .reporting import SolverConfig, compare_methods, sweep_xi
from .scenario import (
    ComputeJob,
    Scenario,
    build_scenario,
    desk_scenario,
    generate_jobmix,
    ingest_carbon_csv,
    load_scenario,
    save_scenario,
    synth_inflexible_load,
)
from .sensitivity import SensitivityResult, compute_sensitivity

__version__ = "0.1.0"
