"""Tests for radial grids, equivariant profiles and their 2-D lifts."""
import math

import numpy as np
import pytest

from src.diagnostics.gaussian_diagnostics import state_terms
from src.fields.field_core import local_energy
from src.fields.radial_profile import RadialProfile, bubble_profile, overshoot_profile, radial_grid
from src.fields.sphere_field import Grid
from src.flow.flow_engine import lift, project_to_profile


def test_radial_grid_spans_zero_to_L():
    r = radial_grid(8.0, 1e-3, 1.05)
    assert r[0] == 0.0
    assert r[-1] == 8.0
    assert np.all(np.diff(r) > 0)
    assert r[1] == pytest.approx(8e-3, rel=0.1)


def test_radial_grid_rejects_bad_arguments():
    with pytest.raises(ValueError):
        radial_grid(8.0, 1e-3, 0.9)


def test_profile_validates_nodes():
    with pytest.raises(ValueError):
        RadialProfile(np.array([0.1, 0.2, 0.3]), np.zeros(3))
    with pytest.raises(ValueError):
        RadialProfile(np.array([0.0, 0.2, 0.3]), np.zeros(3), m=0)


def test_bubble_profile_energy_is_four_pi():
    r = radial_grid(8.0, 1e-3, 1.05)
    p = RadialProfile(r, bubble_profile(r, 0.5), 1)
    assert p.energy() == pytest.approx(4.0 * math.pi, rel=0.02)
    assert p.local_energy(100.0).metadata["truncated"]


def test_overshoot_profile_ends_past_pi():
    r = radial_grid(8.0, 1e-4, 1.02)
    p = RadialProfile(r, overshoot_profile(r, 0.5, 0.5), 1)
    assert p.h_values[-1] > math.pi
    assert np.array_equal(p.boundary_value, [0.0, 0.0, -1.0])


def test_lift_matches_profile_energy():
    r = radial_grid(8.0, 1e-3, 1.05)
    p = RadialProfile(r, bubble_profile(r, 1.0), 1)
    u = lift(p, Grid(8.0, 129))
    assert u.invariant_violations() == {}
    assert local_energy(u, (0.0, 0.0), 4.0).value == pytest.approx(p.local_energy(4.0).value, rel=0.03)


def test_project_recovers_lifted_profile():
    r = radial_grid(8.0, 1e-3, 1.05)
    p = RadialProfile(r, bubble_profile(r, 1.0), 1)
    recovered = project_to_profile(lift(p, Grid(8.0, 129)), p)
    inside = r < 3.0
    assert np.max(np.abs(recovered.h_values[inside] - p.h_values[inside])) < 0.02


def test_profile_and_lift_agree_on_weighted_quantities():
    r = radial_grid(8.0, 1e-3, 1.05)
    p = RadialProfile(r, bubble_profile(r, 1.0), 1)
    radial = state_terms(p).weighted(1.0)
    planar = state_terms(lift(p, Grid(8.0, 129))).weighted(1.0)
    assert planar["Phi"] == pytest.approx(radial["Phi"], rel=0.03)
    assert planar["Psi"] == pytest.approx(radial["Psi"], rel=0.03)
