import csv
import io
import json

import numpy as np
import pytest

import vccopt.reporting as reporting
from vccopt.errors import SolverFailure
from vccopt.fleet import DataCenterFleet
from vccopt.metrics import compute_metrics
from vccopt.reporting import (
    CSV_COLUMNS,
    SolverConfig,
    compare_methods,
    comparison_payload,
    report_json,
    run_method,
    runs_to_csv,
    sweep_xi,
)
from vccopt.scenario import ComputeJob, Scenario, fixture_path, load_scenario


@pytest.fixture(scope="module")
def two_dc():
    return load_scenario(fixture_path("two_dc.json"))


def test_csv_schema(two_dc):
    runs = sweep_xi(two_dc, [0.0], "bilevel")
    rows = list(csv.reader(io.StringIO(runs_to_csv(runs))))
    assert tuple(rows[0]) == CSV_COLUMNS == (
        "method", "xi", "carbon_total", "carbon_per_volume", "peak_price", "migration_cost",
        "waiting_total", "fairness", "status", "wall_time_s")
    assert len(rows) == 2 and rows[1][0] == "bilevel" and rows[1][-2] == "ok"
    assert rows[1][-1] == ""
    timed = list(csv.reader(io.StringIO(runs_to_csv(runs, timings=True))))
    assert float(timed[1][-1]) > 0


def test_sweep_validation(two_dc):
    for bad in ([], [1.0, 0.5], [-1.0]):
        with pytest.raises(ValueError):
            sweep_xi(two_dc, bad)
    with pytest.raises(ValueError):
        sweep_xi(two_dc, [0.0], "naive")


def test_sweep_more_migration_price_never_lowers_carbon(two_dc):
    runs = sweep_xi(two_dc, [0.0, 1e6])
    assert all(r.status == "ok" for r in runs)
    a, b = (r.metrics.carbon_per_volume for r in runs)
    assert b >= a * (1 - 5e-3)


def test_failed_row_keeps_the_others(two_dc, monkeypatch):
    real = reporting.run_big_hype

    def flaky(scenario, params, *args, **kwargs):
        if params.xi == 1.0:
            raise SolverFailure("forced")
        return real(scenario, params, *args, **kwargs)

    monkeypatch.setattr(reporting, "run_big_hype", flaky)
    runs = sweep_xi(two_dc, [0.0, 1.0, 2.0])
    assert [r.status for r in runs] == ["ok", "failed", "ok"]
    assert "forced" in runs[1].error
    rows = list(csv.reader(io.StringIO(runs_to_csv(runs))))
    assert rows[2][2] == "" and rows[2][-2] == "failed"


def test_metrics_recomputation_is_exact(two_dc):
    run = run_method(two_dc, "bilevel")
    again = compute_metrics(two_dc, run.y, run.x)
    assert again == run.metrics


def test_compare_report(two_dc):
    report = compare_methods(two_dc)
    runs = report["runs"]
    assert set(runs) == {"bilevel", "naive", "sequential"}
    assert all(r.status == "ok" for r in runs.values())
    assert runs["bilevel"].metrics.carbon_per_volume <= runs["naive"].metrics.carbon_per_volume
    d = report["deltas"]["naive"]["carbon_per_volume"]
    assert d == pytest.approx(runs["bilevel"].metrics.carbon_per_volume - runs["naive"].metrics.carbon_per_volume)
    assert report["carbon_savings_per_volume"]["naive"] == pytest.approx(-d)
    doc = json.loads(report_json(comparison_payload(report, two_dc)))
    assert doc["schema_version"] == 1 and doc["kind"] == "compare"
    assert doc["methods"]["naive"]["wall_time_s"] is None


def test_compare_with_failing_naive():
    fleet = DataCenterFleet(2, ((1, 2, 0.1),), (1.0, 10.0))
    sc = Scenario(fleet, [ComputeJob(1, 1, 3.0, 1.0)], 2, np.array([[1.0, 1.0], [0.5, 0.5]]), np.zeros((2, 2)),
                  {"k_max": 50})
    report = compare_methods(sc, SolverConfig.from_params(sc.params))
    assert report["runs"]["naive"].status == "failed"
    assert report["runs"]["bilevel"].status == "ok"
    assert report["runs"]["sequential"].status == "ok"
    assert report["deltas"]["naive"] is None
    doc = json.loads(report_json(comparison_payload(report, sc)))
    assert doc["methods"]["naive"]["status"] == "failed"


def test_config_rejects_unknown_keys():
    with pytest.raises(TypeError):
        SolverConfig(**{"bogus": 1})
    cfg = SolverConfig.from_params({"k_max": 3, "carbon": "ignored"}, xi=2.0)
    assert cfg.k_max == 3 and cfg.xi == 2.0


def test_json_floats_are_rounded():
    text = report_json({"v": 0.1 + 0.2, "a": np.array([1 / 3]), "n": float("nan")})
    doc = json.loads(text)
    assert doc["v"] == 0.3 and doc["a"] == [0.333333333333] and doc["n"] is None
