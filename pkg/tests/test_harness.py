"""Tests for perturbation sweeps, rate fits and reports."""
import json
import math
from pathlib import Path

import numpy as np
import pytest

from probmetrics.exceptions import NumericalError, PreconditionError
from probmetrics.schemas import Scenario, ScenarioSuite, SweepReport, SweepRow
from probmetrics.services import harness

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def _scenario(**overrides):
    document = json.loads((SCENARIO_DIR / "gaussian_translate.json").read_text())
    document.update(overrides)
    return Scenario.model_validate(document)


def _suite():
    return ScenarioSuite.model_validate_json((SCENARIO_DIR / "suite.json").read_text())


def _synthetic_report(n_rows=5):
    rows = []
    for k in range(n_rows):
        h = 0.5 / 2**k
        rows.append(SweepRow(
            h=h, A=h, rho_p=2.4 * h, tv=0.8 * h, rhs1=50 * h**0.9, rhs2=9 * h * abs(math.log(h)) ** 3,
            psup=0.5 * h, prhs=40 * h**0.9, ok1=True, ok2=True, okp=True,
        ))
    return SweepReport(scenario="synthetic", rows=rows, metadata={"kind": "translate", "seed": 0})


# ============================================================================
# Scenarios
# ============================================================================

def test_perturb_kinds(bimodal):
    """Test each perturbation kind builds the expected pair."""
    suite = {sc.name: sc for sc in _suite().scenarios}
    xi, eta = harness.perturb(suite["gaussian-translate"], 0.1)
    assert eta.means[0, 0] == pytest.approx(0.1)
    xi, eta = harness.perturb(suite["gaussian-scale"], 0.1)
    assert eta.covs[0, 0, 0] == pytest.approx(1.21)
    xi, eta = harness.perturb(suite["mixture-weight"], 0.1)
    assert xi.same_parameters(bimodal)
    assert eta.weights.tolist() == pytest.approx([0.55, 0.45])
    xi, eta = harness.perturb(suite["smoothed-sequence"], 0.1)
    assert xi.covs[0, 0, 0] == pytest.approx(2.0)
    assert eta.weights.tolist() == pytest.approx([0.9, 0.1])
    assert eta.covs[:, 0, 0].tolist() == pytest.approx([2.0, 1.25])


def test_perturb_smoothed_sequence_needs_contaminant():
    """Test the smoothed sequence refuses to run without a contaminant."""
    scenario = _scenario(kind="smoothed-sequence")
    with pytest.raises(PreconditionError):
        harness.perturb(scenario, 0.1)


@pytest.mark.parametrize("h", [[0.1, 0.0], [0.1, 0.2], [-0.1]])
def test_scenario_rejects_bad_scales(h):
    """Test scales must be positive and strictly descending."""
    with pytest.raises(ValueError):
        _scenario(h=h)


def test_run_row_records_failures():
    """Test a sub-operation error is stored in the row instead of raised."""
    row = harness.run_row(_scenario(resolution=1000), 0.1)
    assert row.failed
    assert row.error.startswith("PreconditionError")
    assert row.rho_p is None


def test_run_sweep_fails_when_rows_fail():
    """Test a sweep whose rows all fail is rejected."""
    with pytest.raises(NumericalError):
        harness.run_sweep(_scenario(resolution=1000, h=[0.2, 0.1, 0.05]))


@pytest.mark.slow
@pytest.mark.integration
def test_translate_sweep_rate_and_certificates():
    """Test the translate sweep recovers slope 1 and satisfies every certificate."""
    report = harness.run_sweep(_scenario())
    assert [row.h for row in report.rows] == [0.5, 0.2, 0.1, 0.05, 0.01]
    assert not any(row.failed or row.violated for row in report.rows)
    assert 0.95 <= report.slope <= 1.05
    assert report.fitted_rows == 5
    assert report.slope >= 1 - _scenario().params.epsilon


@pytest.mark.slow
@pytest.mark.integration
def test_suite_certificates_hold():
    """Test every row of every standard scenario satisfies its certificates."""
    for scenario in _suite().scenarios:
        report = harness.run_sweep(scenario)
        for row in report.rows:
            assert not row.failed, row.error
            assert row.ok1 and row.ok2 and row.okp
            assert row.rho_p >= row.tv
            if scenario.cross_check_entropic:
                assert row.A_entropic > 0


@pytest.mark.slow
@pytest.mark.integration
def test_translate_sweep_in_two_dimensions():
    """Test a 2-D translate sweep measures A = h exactly and keeps every certificate."""
    scenario = Scenario.model_validate_json((SCENARIO_DIR / "gaussian_translate_2d.json").read_text())
    report = harness.run_sweep(scenario)
    for row in report.rows:
        assert not row.failed, row.error
        assert row.A == pytest.approx(row.h, rel=1e-9)
        assert row.rho_p >= row.tv
        assert row.ok1 and row.ok2 and row.okp
        assert row.A_entropic > 0
    assert report.fitted_rows == 3
    assert 0.9 <= report.slope <= 1.1


# ============================================================================
# Rate fitting
# ============================================================================

def test_fit_loglog_synthetic():
    """Test exact power data and a proportional law."""
    x = np.array([1e-3, 1e-2, 1e-1, 0.5])
    slope, stderr, _ = harness.fit_loglog(x, x**0.9)
    assert slope == pytest.approx(0.9, abs=1e-12)
    assert stderr == pytest.approx(0.0, abs=1e-10)
    slope, _, intercept = harness.fit_loglog(x, 3 * x)
    assert slope == pytest.approx(1.0, abs=1e-12)
    assert intercept == pytest.approx(math.log(3), abs=1e-12)


def test_fit_rate_uses_rows_below_one():
    """Test rows with A >= 1 or failures are left out of the fit."""
    rows = list(_synthetic_report().rows)
    rows.append(SweepRow(h=2.0, A=1.5, rho_p=10.0))
    rows.append(SweepRow(h=3.0, error="NumericalError: boom"))
    slope, _ = harness.fit_rate(rows)
    assert slope == pytest.approx(1.0, abs=1e-12)


def test_fit_rate_needs_three_rows():
    """Test fewer than three usable rows is an error."""
    with pytest.raises(PreconditionError):
        harness.fit_rate(_synthetic_report(2).rows)


# ============================================================================
# Reports
# ============================================================================

def test_emit_report_csv_and_json(tmp_path):
    """Test the CSV layout and the JSON mirror of a five-row report."""
    report = _synthetic_report()
    csv_path, json_path = harness.emit_report(report, tmp_path, ["csv", "json"])
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 6
    assert lines[0] == "h,A,rho_p,tv,rhs1,rhs2,psup,prhs,ok1,ok2,okp"
    assert SweepReport.model_validate_json(json_path.read_text()) == report


def test_emit_report_empty_rows(tmp_path):
    """Test an empty report writes a header-only CSV."""
    report = SweepReport(scenario="empty", rows=[])
    (csv_path,) = harness.emit_report(report, tmp_path, ["csv"])
    assert csv_path.read_text() == ",".join(harness.CSV_COLUMNS) + "\n"


def test_emit_report_svg_has_three_polylines(tmp_path):
    """Test the plot holds the measured series and both certificate curves."""
    (svg_path,) = harness.emit_report(_synthetic_report(), tmp_path, ["svg"])
    document = svg_path.read_text()
    assert document.count("<polyline") == 3
    for name in ("measured", "lemma1", "lemma2"):
        assert f'id="{name}"' in document


def test_emit_report_png(tmp_path):
    """Test the matplotlib rendering is written as a PNG file."""
    (png_path,) = harness.emit_report(_synthetic_report(), tmp_path, ["png"])
    assert png_path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_emit_report_rejects_unknown_format(tmp_path):
    """Test unsupported formats are refused before anything is written."""
    with pytest.raises(PreconditionError):
        harness.emit_report(_synthetic_report(), tmp_path, ["csv", "xlsx"])
    assert not list(tmp_path.iterdir())


@pytest.mark.slow
def test_reports_are_reproducible(tmp_path):
    """Test two runs of one scenario give byte-identical CSV and JSON."""
    scenario = _scenario(h=[0.2, 0.1, 0.05], resolution=1024)
    first = harness.emit_report(harness.run_sweep(scenario), tmp_path / "first", ["csv", "json"])
    second = harness.emit_report(harness.run_sweep(scenario), tmp_path / "second", ["csv", "json"])
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()
