"""Tests for certificates, barriers and refinement fits."""
import math

import numpy as np
import pytest

from src.analysis.inequality_lab import (
    FOUR_PI,
    Certificate,
    LojParams,
    barrier_window,
    check_flow_barriers,
    check_monotonicity_residuals,
    check_poincare_T,
    check_poincare_rdu,
    check_psi_bar_claim,
    check_psi_integral_bound,
    estimate_critical_level,
    fit_lojasiewicz_constant,
    fit_order,
    gronwall_barrier,
    lambda_scale,
    loj_certificate,
)
from src.errors import LojParameterError
from src.fields.field_core import make_bubble
from src.fields.sphere_field import Grid


def test_loj_params_defaults_alpha():
    params = LojParams(beta=0.25)
    assert params.alpha == pytest.approx(1.75)
    assert np.allclose(params.levels, FOUR_PI * np.arange(4))


def test_loj_params_rejects_bad_values():
    with pytest.raises(LojParameterError, match="beta"):
        LojParams(beta=1.5)
    with pytest.raises(LojParameterError, match="K"):
        LojParams(K=0.5)


def test_certificate_dict_uses_pass_key():
    certificate = Certificate("poincare-rdu", 1.0, 2.0, 0.5, "abc", True, "pass", {"tau": 1.0})
    data = certificate.to_dict()
    assert data["pass"] is True and "passed" not in data
    assert Certificate.from_dict(data) == certificate


def test_poincare_certificates_pass_on_a_bubble(wide_bubble):
    rdu = check_poincare_rdu(wide_bubble, 1.0)
    assert rdu.status == "pass"
    # Exact bubbles have ||r du|| = sqrt(2) ||x _| du|| and T = 0, so the ratio is 1/sqrt(2)
    assert rdu.ratio == pytest.approx(1.0 / math.sqrt(2.0), rel=0.05)
    assert check_poincare_T(wide_bubble, 1.0).status == "pass"


def test_poincare_certificates_are_degenerate_on_a_constant(constant_field):
    for check in (check_poincare_rdu, check_poincare_T):
        certificate = check(constant_field, 1.0)
        assert certificate.status == "degenerate"
        assert certificate.ok


def test_poincare_certificates_on_a_perturbed_map(rough_field):
    for tau in (0.25, 1.0, 4.0):
        assert check_poincare_rdu(rough_field, tau).ok
        assert check_poincare_T(rough_field, tau).ok


def test_poincare_digest_depends_on_tau(rough_field):
    assert check_poincare_rdu(rough_field, 1.0).inputs_digest != check_poincare_rdu(rough_field, 2.0).inputs_digest


def test_lambda_scale_follows_bubble_scale():
    grid = Grid(4.0, 257)
    # int_{B_2 - B_rho} |du|^2 <= 1 puts rho near lambda sqrt(8 pi - 1)
    small = lambda_scale(make_bubble(grid, 1, 0.08))
    large = lambda_scale(make_bubble(grid, 1, 0.16))
    assert 0.3 < small < 0.48
    assert 0.65 < large < 0.9
    assert 1.6 < large / small < 2.4


def test_lambda_scale_of_a_constant_is_zero(constant_field):
    assert lambda_scale(constant_field) == 0.0


def test_lambda_scale_of_a_profile(bubble_profile_state):
    assert 0.2 < lambda_scale(bubble_profile_state) < 0.3


def test_loj_certificate_records_large_norm(wide_bubble):
    certificate = loj_certificate(wide_bubble, LojParams(C_budget=1e6))
    assert certificate.metadata["n"] == 1
    assert certificate.metadata["large_norm_regime"]
    assert certificate.status == "recorded"
    assert certificate.passed is None


def test_loj_certificate_judges_small_norm(bubble_profile_state):
    recorded = loj_certificate(bubble_profile_state, LojParams())
    assert recorded.status == "recorded"
    assert recorded.metadata["n"] == 1
    assert not recorded.metadata["large_norm_regime"]

    judged = loj_certificate(bubble_profile_state, LojParams(C_budget=1e6))
    assert judged.status == "pass"
    assert judged.lhs == pytest.approx(abs(judged.metadata["Phi"] - FOUR_PI))


def test_loj_certificate_above_energy_cap():
    u = make_bubble(Grid(8.0, 128), 2, 0.5)
    certificate = loj_certificate(u, LojParams(k=1))
    assert certificate.status == "not-applicable"
    assert certificate.metadata["reason"] == "energy-above-cap"


def test_gronwall_barrier_alpha_two_is_exponential():
    params = LojParams(alpha=2.0, K=2.0)
    assert gronwall_barrier(0.5, params, 3.0) == pytest.approx(0.5 * math.exp(-1.5))


def test_gronwall_barrier_decreases():
    params = LojParams(beta=0.5)
    values = gronwall_barrier(0.3, params, np.linspace(0.0, 5.0, 11))
    assert values[0] == pytest.approx(0.3)
    assert np.all(np.diff(values) < 0)


def test_gronwall_barrier_rejects_bad_arguments():
    with pytest.raises(LojParameterError):
        gronwall_barrier(0.0, LojParams(), 1.0)
    with pytest.raises(ValueError):
        gronwall_barrier(0.1, LojParams(), -1.0)


def test_fit_order_recovers_slope():
    hs = [0.1, 0.05, 0.025]
    assert fit_order(hs, [2.0 * h ** 2 for h in hs]) == pytest.approx(2.0)


def test_fit_order_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_order([0.1], [0.01])
    with pytest.raises(ValueError):
        fit_order([0.1, 0.05], [0.01, 0.0])


def test_estimate_critical_level_snaps_to_four_pi_n(make_record, make_run):
    records = [make_record(t, Phi=FOUR_PI + 0.01) for t in (0.1, 0.2, 0.3)]
    level = estimate_critical_level(make_run(records))
    assert level["n"] == 1
    assert level["level"] == pytest.approx(FOUR_PI)
    assert level["gap"] == pytest.approx(0.01)


def test_monotonicity_residuals_under_sampled(make_record, make_run):
    report = check_monotonicity_residuals(make_run([make_record(0.1)]))
    assert report["status"] == "under-sampled"


def test_monotonicity_residuals_flag_increasing_phi(make_record, make_run):
    records = [make_record(t, Phi=1.0 + 10.0 * t) for t in (0.0, 0.1, 0.2)]
    report = check_monotonicity_residuals(make_run(records))
    assert report["status"] == "fail"
    assert len(report["phi_increases"]) == 2


def test_monotonicity_residuals_accept_exact_decay(make_record, make_run):
    # Phi = 1 - 0.25 t with ||T_hat||^2 = 0.25 satisfies the identity exactly
    records = [make_record(t, Phi=1.0 - 0.25 * t, norm_That=0.5, norm_rThat=0.0) for t in np.linspace(0.0, 0.5, 6)]
    report = check_monotonicity_residuals(make_run(records))
    assert report["status"] == "pass"
    assert report["residual_phi_max"] < 1e-12


def test_barriers_not_applicable_above_eps0(make_record, make_run):
    records = [make_record(t, phi=5.0) for t in (0.1, 0.2, 0.3)]
    report = check_flow_barriers(make_run(records), LojParams())
    assert report["status"] == "not-applicable"


def test_barriers_pass_on_decaying_phi(make_record, make_run):
    params = LojParams(alpha=2.0, K=1.0)
    times = np.linspace(0.0, 0.9, 10)
    flow_run = make_run([make_record(t) for t in times])
    s0 = flow_run.records[0].s
    for record in flow_run.records:
        record.phi = gronwall_barrier(0.3, params, record.s - s0)
    window = barrier_window(flow_run)
    assert window["eps"] == pytest.approx(0.3)
    report = check_flow_barriers(flow_run, params)
    assert report["status"] == "pass"
    assert report["violations"] == []


def test_psi_bar_claim_without_admissible_records(make_record, make_run):
    # R = 0.1 puts every record before T1 - R^2, where s < 0
    records = [make_record(t, R=0.1) for t in (0.1, 0.2)]
    report = check_psi_bar_claim(make_run(records, R=0.1))
    assert report["status"] == "not-applicable"


def test_fit_lojasiewicz_constant_from_certificates():
    certificates = [
        Certificate("lojasiewicz", 4.0, 1.0, 4.0, "a", None, "recorded", {"norm_That": 1.0}),
        Certificate("lojasiewicz", 0.01, 0.1, 0.1, "b", None, "recorded", {"norm_That": 0.5}),
    ]
    assert fit_lojasiewicz_constant(certificates, 2.0) == pytest.approx(2.0)


def test_psi_integral_chain_passes_when_psi_is_small(make_record, make_run):
    records = [make_record(t) for t in np.linspace(0.0, 0.85, 12)]
    certificate = check_psi_integral_bound(make_run(records), LojParams())
    assert certificate.status == "pass"
    assert certificate.ratio == pytest.approx(0.125)
    assert certificate.metadata["pointwise"]["passed"]
    assert certificate.metadata["barrier_link"]["passed"]


def test_psi_integral_chain_fails_pointwise(make_record, make_run):
    records = [make_record(t, psi=1.0) for t in np.linspace(0.0, 0.85, 12)]
    certificate = check_psi_integral_bound(make_run(records), LojParams())
    assert certificate.status == "fail"
    assert len(certificate.metadata["pointwise"]["failures"]) == 12


def test_psi_integral_under_sampled(make_record, make_run):
    records = [make_record(t) for t in (0.1, 0.2, 0.3)]
    assert check_psi_integral_bound(make_run(records), LojParams()).status == "under-sampled"


def test_psi_integral_rejects_window_past_half_span(make_record, make_run):
    records = [make_record(t) for t in np.linspace(0.0, 0.85, 12)]
    with pytest.raises(ValueError):
        check_psi_integral_bound(make_run(records), LojParams(), s=5.0)


def test_psi_integral_fails_pointwise_on_a_short_window(make_record, make_run):
    records = [make_record(t, psi=5.0, delta=0.2) for t in (0.1, 0.3, 0.5)]
    certificate = check_psi_integral_bound(make_run(records), LojParams())
    assert certificate.status == "fail"
    assert certificate.passed is False
    assert not certificate.ok
    assert certificate.ratio == pytest.approx(6.25)
    assert certificate.metadata["pointwise"]["failures"] == [0.1, 0.3, 0.5]


def test_psi_integral_fails_pointwise_when_integrals_are_degenerate(make_record, make_run):
    records = [make_record(t, psi=1e-16, delta=0.0) for t in np.linspace(0.0, 0.85, 12)]
    certificate = check_psi_integral_bound(make_run(records), LojParams())
    assert certificate.status == "fail"
    assert not certificate.ok
