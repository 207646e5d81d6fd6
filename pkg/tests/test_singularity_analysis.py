"""Tests for concentration detection, bubble extraction and oscillation."""
import math

import numpy as np
import pytest

from src.analysis import singularity_analysis
from src.analysis.singularity_analysis import (
    body_map,
    check_oscillation_bound,
    check_rdu_bound,
    detect_concentration,
    energy_identity_check,
    energy_identity_table,
    extract_bubble,
    geodesic_distance,
    oscillation,
)
from src.analysis.inequality_lab import LojParams
from src.errors import UnderResolvedError
from src.fields.field_core import make_bubble_pair
from src.fields.sphere_field import Grid

FOUR_PI = 4.0 * math.pi


def test_detects_profile_concentration_at_bubble_scale(bubble_profile_state):
    found = detect_concentration(bubble_profile_state)
    assert len(found) == 1
    assert found[0].center == (0.0, 0.0)
    assert found[0].bubble_scale == pytest.approx(0.05, rel=0.1)


def test_detects_one_concentration_for_a_wide_bubble(wide_bubble):
    found = detect_concentration(wide_bubble)
    assert len(found) == 1
    assert np.hypot(*found[0].center) < wide_bubble.grid.spacing
    assert found[0].bubble_scale == pytest.approx(1.0, rel=0.2)


def test_detects_both_bubbles_of_a_pair():
    u = make_bubble_pair(Grid(8.0, 256), 3.0, 0.3)
    found = detect_concentration(u)
    assert len(found) == 2
    xs = sorted(c.center[0] for c in found)
    assert xs == pytest.approx([-1.5, 1.5], abs=0.1)
    assert all(abs(c.center[1]) < 0.1 for c in found)


def test_constant_map_has_no_concentration(constant_field):
    assert detect_concentration(constant_field) == []


def test_extract_bubble_reads_degree_one(wide_bubble):
    report = extract_bubble(wide_bubble, (0.0, 0.0), 1.0)
    assert report.degree_estimate == 1
    assert report.extraction_snapshot.invariant_violations() == {}
    assert np.linalg.norm(report.limit_value) == pytest.approx(1.0)


def test_extract_bubble_rejects_under_resolved_scale(wide_bubble):
    with pytest.raises(UnderResolvedError):
        extract_bubble(wide_bubble, (0.0, 0.0), wide_bubble.grid.spacing)


def test_energy_identity_for_a_single_profile_bubble(bubble_profile_state):
    table = energy_identity_table(bubble_profile_state)
    assert len(table["bubbles"]) == 1
    assert table["bubbles"][0]["degree_estimate"] == 1
    assert table["sum_bubbles"] == pytest.approx(FOUR_PI)
    assert table["gap"] < 0.05
    assert table["status"] == "ok"
    assert all(set(row) == {"r", "E_inner", "sum_bubbles", "gap"} for row in table["rows"])


def test_oscillation_of_a_constant_is_zero(constant_field):
    assert oscillation(constant_field, (0.0, 0.0), 1.0, 4.0) == 0.0


def test_oscillation_of_a_bubble_tail(bubble_profile_state):
    # h runs from 2 arctan(20) to 2 arctan(80) on [1, 4]
    expected = 2.0 * (math.pi - 2.0 * math.atan(20.0))
    assert oscillation(bubble_profile_state, (0.0, 0.0), 1.0, 4.0) == pytest.approx(expected, rel=0.02)


def test_oscillation_rejects_radii_below_resolution(constant_field):
    with pytest.raises(ValueError):
        oscillation(constant_field, (0.0, 0.0), 0.01, 1.0)


def test_geodesic_distance():
    north, south, east = np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, -1.0]), np.array([1.0, 0.0, 0.0])
    assert geodesic_distance(north, south) == pytest.approx(math.pi)
    assert geodesic_distance(north, east) == pytest.approx(math.pi / 2.0)
    assert geodesic_distance(north, north) == 0.0


def test_rdu_bound_not_applicable_before_T1_minus_R2(make_record, make_run):
    records = [make_record(t, R=0.1) for t in (0.1, 0.2)]
    report = check_rdu_bound(make_run(records, R=0.1))
    assert report["status"] == "not-applicable"


@pytest.fixture
def constant_run(constant_field, make_record, make_run):
    flow_run = make_run([make_record(0.1)])
    flow_run.states = [constant_field]
    return flow_run


def test_energy_identity_check_on_a_run_without_concentration(constant_run):
    report = energy_identity_check(constant_run)
    assert report["bubbles"] == []
    assert report["sum_bubbles"] == 0.0
    assert report["concentrated"] is False
    assert "note" in report
    assert report["status"] != "fail"


def test_body_map_of_a_constant_run(constant_run, constant_field):
    body = body_map(constant_run)
    assert body.concentration_scale == 0.0
    assert body.limit_value == pytest.approx([0.0, 0.0, 1.0])
    assert body.table
    assert all(row["osc"] == 0.0 for row in body.table)
    assert body.table[0]["r_in"] == pytest.approx(constant_field.grid.spacing)


def test_oscillation_bound_under_sampled_on_a_short_window(constant_run):
    report = check_oscillation_bound(constant_run, LojParams())
    assert report["status"] == "under-sampled"
    assert report["annuli"] == 0


def test_rdu_bound_not_applicable_for_large_psi(make_record, make_run):
    records = [make_record(t, psi=2.0) for t in (0.1, 0.5)]
    report = check_rdu_bound(make_run(records), eps0=1.0)
    assert report["status"] == "not-applicable"
    assert report["sup_psi2"] == pytest.approx(4.0)


def _run_with_state(make_record, make_run, state):
    records = [make_record(t) for t in (0.5, 0.8, 0.95, 0.99)]
    flow_run = make_run(records)
    flow_run.states = [state] * len(records)
    return flow_run


def test_rdu_bound_degenerate_for_a_constant_run(constant_field, make_record, make_run):
    report = check_rdu_bound(_run_with_state(make_record, make_run, constant_field), eps0=1.0)
    assert report["status"] == "degenerate"
    assert report["C_kappa"] == 0.0


def test_rdu_bound_reports_a_positive_constant_on_a_bubble(wide_bubble, make_record, make_run):
    report = check_rdu_bound(_run_with_state(make_record, make_run, wide_bubble), eps0=1.0)
    assert report["status"] == "ok"
    assert report["C_kappa"] > 0.0
    assert all(row["rhs"] > 0.0 for row in report["rows"])


@pytest.fixture
def dyadic_samples(monkeypatch):
    """Six dyadic annuli whose oscillation is set by the test."""
    radii = [2.0 ** -k for k in range(1, 7)]
    monkeypatch.setattr(
        singularity_analysis,
        "_oscillation_radii",
        lambda flow_run, lambda_run: [(r, 0.01 * r, 0.9, None) for r in radii],
    )

    def use(osc):
        monkeypatch.setattr(singularity_analysis, "_annulus_oscillation", lambda state, center, r_in, r: osc(r))

    return use


def test_oscillation_bound_passes_for_holder_decay(dyadic_samples, make_record, make_run):
    dyadic_samples(lambda r: 0.5 * r)
    report = check_oscillation_bound(make_run([make_record(t) for t in (0.1, 0.5)]), LojParams(alpha=2.0))
    assert report["status"] == "pass"
    assert report["fitted_exponent"] == pytest.approx(1.0)


def test_oscillation_bound_fails_when_oscillation_grows_inward(dyadic_samples, make_record, make_run):
    dyadic_samples(lambda r: 0.05 / r)
    report = check_oscillation_bound(make_run([make_record(t) for t in (0.1, 0.5)]), LojParams(alpha=2.0))
    assert report["status"] == "fail"
    assert report["annuli"] == 6
    assert report["fitted_exponent"] == pytest.approx(-1.0)
    assert report["expected_minimum"] == pytest.approx(0.7)
