"""Tests for the Gaussian-weighted quantities and diagnostic records."""
import math

import numpy as np
import pytest

from src.diagnostics.gaussian_diagnostics import (
    ANNULUS_COUNT,
    DiagnosticRecord,
    WeightedScale,
    dyadic_annuli,
    phi,
    poincare_identity_residual,
    psi_quantity,
    psi_r4,
    record_diagnostics,
    twisted_tension,
    weighted_norm,
    weighted_quantities,
    x_contract_du,
)
from src.fields.field_core import make_bubble, tension
from src.fields.sphere_field import Grid

FOUR_PI = 4.0 * math.pi


def test_weighted_scale_rejects_non_positive_tau():
    with pytest.raises(ValueError):
        WeightedScale(0.0)


def test_weighted_scale_full_accuracy_range():
    scale = WeightedScale(1.0)
    assert scale.support_radius == pytest.approx(4.0)
    assert scale.fits(8.0)
    assert not WeightedScale(9.0).fits(8.0)


def test_constant_map_has_zero_weighted_quantities(constant_field):
    q = weighted_quantities(constant_field, WeightedScale(1.0))
    assert q["Phi"] == 0.0
    assert q["Psi"] == 0.0
    assert q["norm_That"] == 0.0
    assert weighted_norm(tension(constant_field), WeightedScale(1.0)).value == 0.0
    assert psi_r4(constant_field, WeightedScale(1.0)) == 0.0


def test_wide_bubble_phi_matches_closed_form(wide_bubble):
    # For lambda = 1, tau = 1: Phi = 4 pi (1 - e^(1/4) E1(1/4) / 4) ~ 0.665 * 4 pi
    value = phi(wide_bubble, WeightedScale(1.0))
    assert 0.62 * FOUR_PI < value < 0.71 * FOUR_PI
    assert psi_quantity(wide_bubble, WeightedScale(1.0)) > 0.0


def test_small_bubble_phi_is_nearly_four_pi(bubble_profile_state):
    value = phi(bubble_profile_state, WeightedScale(1.0))
    assert 0.98 * FOUR_PI < value < FOUR_PI


def test_poincare_identity_holds_on_a_bubble(wide_bubble):
    residual = poincare_identity_residual(wide_bubble, WeightedScale(1.0))
    assert residual["lhs"] < 0.0
    assert residual["relative_residual"] < 0.1


def test_twisted_tension_norm_matches_cached_terms(rough_field):
    scale = WeightedScale(0.5)
    direct = weighted_norm(twisted_tension(rough_field, scale), scale)
    assert direct.value == pytest.approx(weighted_quantities(rough_field, scale)["norm_That"], rel=1e-10)
    assert direct.metadata["full_accuracy"]


def test_scalar_weighted_norm_needs_grid(rough_field):
    with pytest.raises(ValueError):
        weighted_norm(rough_field.values[..., 0], WeightedScale(1.0))


def test_dyadic_annuli():
    assert dyadic_annuli(1.0, 3) == [(0.5, 1.0), (0.25, 0.5), (0.125, 0.25)]


def test_record_requires_positive_tau(rough_field):
    with pytest.raises(ValueError):
        record_diagnostics(rough_field, 1.0, 1.0, 1.0)


def test_record_fields(rough_field):
    record = record_diagnostics(rough_field, 0.5, 1.0, 1.0, E0=2.0)
    assert record.tau == pytest.approx(0.5)
    assert record.phi == pytest.approx(record.Phi - 2.0)
    assert record.psi == pytest.approx(math.sqrt(record.Psi / 0.5))
    assert record.delta == pytest.approx(math.sqrt(0.5) * record.norm_That)
    assert record.s == pytest.approx(math.log(1.0 / math.sqrt(0.5)))
    assert len(record.annulus_energies) == ANNULUS_COUNT
    assert all(energy >= 0.0 for _, _, energy in record.annulus_energies)


def test_record_dict_round_trip(rough_field):
    record = record_diagnostics(rough_field, 0.25, 1.0, 1.0)
    assert DiagnosticRecord.from_dict(record.to_dict()) == record


def test_profile_record_uses_radial_quadrature(bubble_profile_state):
    record = record_diagnostics(bubble_profile_state, 0.0, 1.0, 1.0)
    assert record.energy == pytest.approx(FOUR_PI, rel=0.01)


def test_r4_moment_grows_with_tau(wide_bubble):
    small, large = psi_r4(wide_bubble, WeightedScale(1.0)), psi_r4(wide_bubble, WeightedScale(2.0))
    assert 0.0 < small < large


def test_phi_is_invariant_under_parabolic_rescaling():
    # u(2x) on [-4, 4]^2 and u on [-8, 8]^2 share their node values
    squeezed = make_bubble(Grid(4.0, 128), 1, 0.5)
    original = make_bubble(Grid(8.0, 128), 1, 1.0)
    assert phi(squeezed, WeightedScale(1.0)) == pytest.approx(phi(original, WeightedScale(4.0)), rel=1e-9)


def test_phi_grows_with_tau(wide_bubble, rough_field):
    taus = [0.05, 0.2, 0.5, 1.0, 2.0]
    for u in (wide_bubble, rough_field):
        values = [phi(u, WeightedScale(tau)) for tau in taus]
        assert np.all(np.diff(values) > 0.0)


def test_radial_contraction_is_dominated_by_r_du(rough_field):
    for tau in (0.25, 1.0, 4.0):
        scale = WeightedScale(tau)
        contracted = weighted_norm(x_contract_du(rough_field), scale).value
        assert contracted <= weighted_quantities(rough_field, scale)["norm_rdu"] * (1.0 + 1e-12)
        assert contracted == pytest.approx(weighted_quantities(rough_field, scale)["norm_xdu"], rel=1e-10)


@pytest.mark.parametrize("tau, expected", [(1.0, math.sqrt(4.0 * math.pi)), (4.0, math.sqrt(16.0 * math.pi))])
def test_weighted_norm_of_one(tau, expected):
    grid = Grid(20.0, 401)
    norm = weighted_norm(np.ones((grid.nodes, grid.nodes)), WeightedScale(tau), grid)
    assert norm.value == pytest.approx(expected, rel=1e-6)
    assert norm.metadata["full_accuracy"]
