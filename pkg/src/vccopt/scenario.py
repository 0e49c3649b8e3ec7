"""Scenario model and file formats.

A scenario file is a single UTF-8 JSON document::

    {
      "schema_version": 1,
      "fleet": {"dc_count": D, "physical_capacity": [...], "edges": [[k, l, sigma], ...],
                "names": [...]},                       # names optional
      "horizon": T,
      "jobs": [{"id": 1, "home_dc": 1, "volume": 3.0, "priority": 2.0}, ...],
      "carbon": {"D": D, "T": T, "values": [[...], ...]}           # row-major [d][t]
             or {"csv": "relative/path.csv", "columns": {"<header>": dc_id, ...},
                 "scale": 1.0},                                # optional unit factor
      "inflexible": {"D": D, "T": T, "values": [[...], ...]}
             or {"synthetic": {"base": 0.5, "amplitude": 0.3, "phase": [...]}},
      "params": {...}                                  # optional solver parameters
    }
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    AmplitudeOutOfRange,
    BudgetInfeasible,
    MissingColumn,
    NegativeIntensity,
    ParseError,
    TooFewRows,
    ValidationError,
)
from .fleet import DataCenterFleet, MigrationPath, all_shortest_paths, path_price_matrix, validate_fleet

SCHEMA_VERSION = 1
DEFAULT_PRIORITY_GRID = (1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class ComputeJob:
    id: int
    home_dc: int
    volume: float
    priority: float


@dataclass
class Scenario:
    fleet: DataCenterFleet
    jobs: List[ComputeJob]
    horizon: int
    carbon_intensity: np.ndarray
    inflexible_load: np.ndarray
    params: Dict = field(default_factory=dict)
    paths: Dict[int, Dict[int, MigrationPath]] = field(default=None, repr=False)

    def __post_init__(self):
        self.carbon_intensity = np.asarray(self.carbon_intensity, dtype=float)
        self.inflexible_load = np.asarray(self.inflexible_load, dtype=float)
        if self.paths is None:
            validate_fleet(self.fleet)
            self.paths = all_shortest_paths(self.fleet)

    @property
    def D(self) -> int:
        return self.fleet.dc_count

    @property
    def T(self) -> int:
        return self.horizon

    @property
    def I(self) -> int:
        return len(self.jobs)

    @property
    def x_max(self) -> np.ndarray:
        """Effective capacity grid, shape (D, T)."""
        return self.fleet.capacity_array[:, None] - self.inflexible_load

    @property
    def volumes(self) -> np.ndarray:
        return np.array([j.volume for j in self.jobs], dtype=float)

    @property
    def priorities(self) -> np.ndarray:
        return np.array([j.priority for j in self.jobs], dtype=float)

    @property
    def homes(self) -> np.ndarray:
        """0-based home DC index per job."""
        return np.array([j.home_dc - 1 for j in self.jobs], dtype=int)

    @property
    def path_prices(self) -> np.ndarray:
        return path_price_matrix(self.paths, self.D)

    def first_step_caps(self) -> np.ndarray:
        """Per-DC cap on x[d, 0]: total volume uploaded at that DC."""
        caps = np.zeros(self.D)
        for job in self.jobs:
            caps[job.home_dc - 1] += job.volume
        return caps

    def upper_bounds(self) -> np.ndarray:
        """Box upper bound of the VCC set X, shape (D, T)."""
        ub = self.x_max.copy()
        ub[:, 0] = np.minimum(ub[:, 0], self.first_step_caps())
        return np.maximum(ub, 0.0)

    def with_params(self, **updates) -> "Scenario":
        params = dict(self.params)
        params.update(updates)
        return Scenario(self.fleet, list(self.jobs), self.horizon, self.carbon_intensity.copy(),
                        self.inflexible_load.copy(), params, self.paths)

    def validate(self) -> None:
        validate_scenario(self)


def validate_scenario(sc: Scenario) -> None:
    validate_fleet(sc.fleet)
    if sc.horizon < 1:
        raise ValidationError("horizon T must be a positive integer")
    shape = (sc.D, sc.T)
    if sc.carbon_intensity.shape != shape:
        raise ValidationError(f"carbon grid has shape {sc.carbon_intensity.shape}, expected {shape}")
    if sc.inflexible_load.shape != shape:
        raise ValidationError(f"inflexible load grid has shape {sc.inflexible_load.shape}, expected {shape}")
    if not np.all(np.isfinite(sc.carbon_intensity)) or np.any(sc.carbon_intensity < 0):
        raise ValidationError("carbon intensity must be finite and nonnegative")
    if not np.all(np.isfinite(sc.inflexible_load)) or np.any(sc.inflexible_load < 0):
        raise ValidationError("inflexible load must be finite and nonnegative")
    if np.any(sc.x_max < 0):
        raise ValidationError("effective capacity: inflexible load exceeds physical capacity")
    ids = set()
    for job in sc.jobs:
        if job.id in ids:
            raise ValidationError(f"duplicate job id {job.id}")
        ids.add(job.id)
        if not job.volume > 0:
            raise ValidationError(f"job {job.id}: volume must be positive")
        if not job.priority > 0:
            raise ValidationError(f"job {job.id}: priority must be positive")
        if not 1 <= job.home_dc <= sc.D:
            raise ValidationError(f"job {job.id}: home_dc {job.home_dc} outside 1..{sc.D}")
    if sc.x_max.sum() < sc.volumes.sum():
        raise ValidationError("aggregate feasibility: total job volume exceeds total effective capacity")


# ----------------------------------------------------------------------------
# carbon / load inputs


def ingest_carbon_csv(path, dc_mapping: Mapping[str, int], T: int) -> np.ndarray:
    """Read a carbon-intensity CSV into a (D, T) grid indexed [d][t].

    ``dc_mapping`` maps header names to 1-based DC ids; D is the number of
    mapped DCs.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TooFewRows(f"{path}: empty file") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    D = len(dc_mapping)
    if sorted(dc_mapping.values()) != list(range(1, D + 1)):
        raise ParseError("dc_mapping must map onto DC ids 1..D exactly once")
    if len(rows) < T:
        raise TooFewRows(f"{path}: {len(rows)} data rows, need {T}")
    grid = np.zeros((D, T))
    for column, dc in dc_mapping.items():
        if column not in header:
            raise MissingColumn(f"{path}: no column {column!r}")
        col = header.index(column)
        for t in range(T):
            try:
                value = float(rows[t][col])
            except (IndexError, ValueError) as exc:
                raise ParseError(f"{path}: row {t + 2}, column {column!r}: {exc}") from None
            if value < 0:
                raise NegativeIntensity(f"{path}: negative intensity {value} in column {column!r}")
            grid[dc - 1, t] = value
    return grid


def synth_inflexible_load(
    capacity: Sequence[float],
    T: int,
    amplitude: float = 0.3,
    phase: Optional[Sequence[float]] = None,
    base: float = 0.5,
) -> np.ndarray:
    """Sinusoidal inflexible load, ``cap * (base + amplitude * sin(2 pi t / T + phase))``, t = 0..T-1."""
    cap = np.asarray(capacity, dtype=float)
    D = cap.size
    if not (0.0 <= base - amplitude and base + amplitude <= 1.0 and amplitude >= 0):
        raise AmplitudeOutOfRange(f"base={base}, amplitude={amplitude} leave [0, 1]")
    if phase is None:
        phase = default_phases(D)
    phase = np.asarray(phase, dtype=float)
    t = np.arange(T)
    frac = base + amplitude * np.sin(2 * np.pi * t[None, :] / T + phase[:, None])
    return np.clip(cap[:, None] * frac, 0.0, cap[:, None])


def default_phases(D: int) -> np.ndarray:
    return 2 * np.pi * np.arange(D) / D


def generate_jobmix(
    kind: str,
    x_max: np.ndarray,
    seed: int = 0,
    budget: float = 0.5,
    n_jobs: int = 8,
    priority_grid: Sequence[float] = DEFAULT_PRIORITY_GRID,
) -> List[ComputeJob]:
    """Draw a deterministic job list of the given kind.

    small jobs fit inside the smallest positive step capacity of their home
    DC; large jobs exceed the largest one. The volume uploaded at each home DC
    never exceeds ``budget`` times that DC's capacity over the horizon, so the
    total never exceeds ``budget * x_max.sum()``.
    """
    if kind not in ("large", "small", "mixed"):
        raise ValueError(f"unknown job mix kind {kind!r}")
    if not 0 < budget <= 1:
        raise BudgetInfeasible(f"budget {budget} outside (0, 1]")
    x_max = np.asarray(x_max, dtype=float)
    D, _ = x_max.shape
    rng = np.random.default_rng(seed)
    room = budget * x_max.sum(axis=1)
    jobs: List[ComputeJob] = []
    for _ in range(n_jobs):
        home = int(rng.integers(D))
        cls = kind if kind != "mixed" else ("large" if rng.random() < 0.5 else "small")
        row = x_max[home]
        positive = row[row > 0]
        if positive.size == 0:
            continue
        if cls == "small":
            v = float(positive.min() * rng.uniform(0.2, 0.9))
        else:
            v = float(positive.max() * rng.uniform(1.05, 1.6))
        tau = float(rng.choice(priority_grid))
        if v <= room[home]:
            room[home] -= v
            jobs.append(ComputeJob(len(jobs) + 1, home + 1, v, tau))
    if not jobs:
        raise BudgetInfeasible(f"no {kind} job fits within budget {budget}")
    return jobs


# ----------------------------------------------------------------------------
# file I/O


def _grid_to_json(grid: np.ndarray) -> Dict:
    D, T = grid.shape
    return {"D": D, "T": T, "values": [[float(v) for v in row] for row in grid]}


def _grid_from_json(obj: Mapping, D: int, T: int, what: str) -> np.ndarray:
    try:
        values = np.asarray(obj["values"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{what}: cannot read values ({exc})") from None
    if obj.get("D", D) != D or obj.get("T", T) != T or values.shape != (D, T):
        raise ValidationError(f"{what}: expected exactly {D}x{T} entries, got shape {values.shape}")
    return values


def scenario_from_dict(doc: Mapping, base_dir: Optional[Path] = None) -> Scenario:
    try:
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ParseError(f"unsupported schema_version {doc.get('schema_version')!r}")
        f = doc["fleet"]
        fleet = DataCenterFleet(
            dc_count=int(f["dc_count"]),
            edges=tuple(tuple(e) for e in f.get("edges", [])),
            physical_capacity=tuple(f["physical_capacity"]),
            names=tuple(f["names"]) if f.get("names") else None,
        )
        T = int(doc["horizon"])
        jobs = [
            ComputeJob(int(j["id"]), int(j["home_dc"]), float(j["volume"]), float(j["priority"]))
            for j in doc["jobs"]
        ]
        carbon_doc = doc["carbon"]
        inflex_doc = doc["inflexible"]
        params = dict(doc.get("params", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed scenario: {exc!r}") from None

    validate_fleet(fleet)
    D = fleet.dc_count
    if "csv" in carbon_doc:
        csv_path = Path(carbon_doc["csv"])
        if not csv_path.is_absolute() and base_dir is not None:
            csv_path = base_dir / csv_path
        carbon = ingest_carbon_csv(csv_path, {k: int(v) for k, v in carbon_doc["columns"].items()}, T)
        carbon = carbon * float(carbon_doc.get("scale", 1.0))
        if carbon.shape[0] != D:
            raise ValidationError(f"carbon CSV maps {carbon.shape[0]} DCs, fleet has {D}")
    else:
        carbon = _grid_from_json(carbon_doc, D, T, "carbon")
    if "synthetic" in inflex_doc:
        s = inflex_doc["synthetic"]
        inflex = synth_inflexible_load(fleet.physical_capacity, T, s.get("amplitude", 0.3),
                                       s.get("phase"), s.get("base", 0.5))
    else:
        inflex = _grid_from_json(inflex_doc, D, T, "inflexible")

    sc = Scenario(fleet, jobs, T, carbon, inflex, params)
    validate_scenario(sc)
    return sc


def scenario_to_dict(sc: Scenario) -> Dict:
    fleet = {
        "dc_count": sc.fleet.dc_count,
        "physical_capacity": list(sc.fleet.physical_capacity),
        "edges": [[k, l, s] for k, l, s in sc.fleet.edges],
    }
    if sc.fleet.names:
        fleet["names"] = list(sc.fleet.names)
    return {
        "schema_version": SCHEMA_VERSION,
        "fleet": fleet,
        "horizon": sc.horizon,
        "jobs": [{"id": j.id, "home_dc": j.home_dc, "volume": j.volume, "priority": j.priority} for j in sc.jobs],
        "carbon": _grid_to_json(sc.carbon_intensity),
        "inflexible": _grid_to_json(sc.inflexible_load),
        "params": dict(sc.params),
    }


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return scenario_from_dict(doc, base_dir=path.parent)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        # mkstemp creates 0600; give the file the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_scenario(sc: Scenario, path) -> None:
    atomic_write_text(path, json.dumps(scenario_to_dict(sc), indent=2) + "\n")


def build_scenario(
    fleet: DataCenterFleet,
    carbon: np.ndarray,
    kind: str,
    T: int,
    seed: int = 0,
    n_jobs: int = 8,
    budget: float = 0.5,
    amplitude: float = 0.3,
    base: float = 0.5,
    phase: Optional[Sequence[float]] = None,
    params: Optional[Dict] = None,
) -> Scenario:
    """Synthetic scenario: sinusoidal inflexible load plus a generated job mix."""
    inflex = synth_inflexible_load(fleet.physical_capacity, T, amplitude, phase, base)
    x_max = fleet.capacity_array[:, None] - inflex
    jobs = generate_jobmix(kind, x_max, seed=seed, budget=budget, n_jobs=n_jobs)
    sc = Scenario(fleet, jobs, T, carbon, inflex, dict(params or {}))
    validate_scenario(sc)
    return sc


def fixture_path(name: str) -> Path:
    """Path of a bundled data file (see ``vccopt/data``)."""
    return Path(__file__).parent / "data" / name


DESK_FIXTURE = "desk_12dc.json"


def desk_scenario(kind: str = "mixed", seed: int = 0, n_jobs: int = 20, budget: float = 0.5) -> Scenario:
    """Bundled 12-DC, T=5 fleet and carbon data with a freshly generated job mix."""
    base = load_scenario(fixture_path(DESK_FIXTURE))
    jobs = generate_jobmix(kind, base.x_max, seed=seed, budget=budget, n_jobs=n_jobs)
    sc = Scenario(base.fleet, jobs, base.horizon, base.carbon_intensity, base.inflexible_load,
                  dict(base.params), base.paths)
    validate_scenario(sc)
    return sc


def ring_fleet(capacity: Sequence[float], prices: Sequence[float]) -> DataCenterFleet:
    """Cycle graph 1-2-...-D-1 with the given edge prices (D-1 prices for a path when D == 2)."""
    D = len(capacity)
    if D == 1:
        return DataCenterFleet(1, (), tuple(capacity))
    if D == 2:
        return DataCenterFleet(2, ((1, 2, prices[0]),), tuple(capacity))
    edges = tuple((d, d % D + 1, prices[d - 1]) for d in range(1, D + 1))
    return DataCenterFleet(D, edges, tuple(capacity))


__all__ = [
    "ComputeJob",
    "Scenario",
    "SCHEMA_VERSION",
    "build_scenario",
    "desk_scenario",
    "fixture_path",
    "generate_jobmix",
    "ingest_carbon_csv",
    "load_scenario",
    "ring_fleet",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "synth_inflexible_load",
    "validate_scenario",
    "atomic_write_text",
]