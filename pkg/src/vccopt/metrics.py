"""Allocation quality metrics shared by the bilevel path, the baselines and the reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .bilevel import migration_coefficients, peak_term
from .game import build_layout, check_allocation
from .scenario import Scenario

METRIC_FIELDS = (
    "carbon_total",
    "carbon_per_volume",
    "peak_price",
    "migration_cost",
    "waiting_total",
    "fairness",
)


@dataclass(frozen=True)
class MetricsBundle:
    carbon_total: float
    carbon_per_volume: float
    peak_price: float
    migration_cost: float
    waiting_total: float
    fairness: float

    def as_dict(self) -> dict:
        return asdict(self)


def waiting_times(scenario: Scenario, y) -> np.ndarray:
    """Per-job priority-weighted waiting time: sum over d, t of tau * (t/T) * y (t counted from 1)."""
    layout = build_layout(scenario)
    alloc = layout.allocations(np.asarray(y, dtype=float))
    steps = np.arange(1, layout.T + 1) / layout.T
    return scenario.priorities * np.einsum("idt,t->i", alloc, steps)


def compute_metrics(scenario: Scenario, y, x=None, ddof: int = 0, tol: float = 1e-6) -> MetricsBundle:
    """Metrics of a stacked allocation ``y``.

    ``y`` is checked against the allocation constraints under ``x`` (default
    x_max) first. ``fairness`` is the standard deviation of waiting time per
    unit volume; ``ddof=0`` gives the population form.
    """
    y = np.asarray(y, dtype=float).ravel()
    check_allocation(scenario, y, x, tol)
    layout = build_layout(scenario)
    load = layout.load(y)
    carbon = float(np.sum(scenario.carbon_intensity * load))
    peak, _ = peak_term(load, int(scenario.params.get("p", 6)))
    migr = float(migration_coefficients(scenario, layout) @ y)
    wait = waiting_times(scenario, y)
    per_volume = wait / scenario.volumes
    fairness = float(np.std(per_volume, ddof=ddof)) if per_volume.size > ddof else 0.0
    # clip round-off from the tiny negative entries a QP solution may carry
    return MetricsBundle(
        carbon_total=max(carbon, 0.0),
        carbon_per_volume=max(carbon, 0.0) / float(scenario.volumes.sum()),
        peak_price=max(float(peak), 0.0),
        migration_cost=max(migr, 0.0),
        waiting_total=max(float(wait.sum()), 0.0),
        fairness=fairness,
    )
