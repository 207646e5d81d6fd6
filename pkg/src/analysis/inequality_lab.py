"""
Empirical checks of the weighted inequalities behind the no-neck theorem.

Snapshot certificates:
- weighted Poincare:   ||r du||_tau <= 4 tau ||T_hat_tau||_tau,  ||T||_tau <= 3 ||T_hat_tau||_tau
- Lojasiewicz on S^2:  |Phi_1 - 4 pi n| <= C ||T_hat_1||_1^(2 - beta)
- lambda scale:        lambda <= C ||T_hat_1||_1

Run reports (over the DiagnosticRecord stream of a FlowRun):
- Gronwall barriers   -phi_bar(S - s) <= phi(s) <= phi_bar(s)
- psi integral chain  int psi <= 4 int delta <= 8 alpha/(alpha - 1) K phi_bar^((alpha - 1)/alpha)
- monotonicity identities for Phi and Psi along tau = T1 - t
- the psi-bar Gronwall claim
"""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import trapezoid
from tqdm import tqdm

from config import settings
from src.diagnostics.gaussian_diagnostics import DiagnosticRecord, State, state_terms
from src.errors import LojParameterError
from src.fields.radial_profile import RadialProfile
from src.fields.sphere_field import Grid, SphereField
from src.flow.flow_engine import FlowConfig, FlowRun, recompute_diagnostics, run as run_flow

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
DEGENERATE_LEVEL = 1e-14
STENCIL_FACTOR = 10.0


@dataclass
class LojParams:
    """
    Parameters of the Lojasiewicz inequality and of the barrier argument.

    Args:
        k: Energy cap, E <= 4 pi k
        beta: Exponent deficit in (0, 1)
        alpha: Lojasiewicz exponent in (1, 2]; defaults to 2 - beta
        K: Constant of |phi|^(1/alpha) <= K delta, at least 1
        eps0: Small-energy threshold
        E0: Critical level (a multiple of 4 pi for S^2)
        C_budget: Constant that loj_certificate judges against (None: report only)
    """

    k: int = 3
    beta: float = settings.LOJ_BETA
    alpha: Optional[float] = None
    K: float = 1.0
    eps0: float = settings.EPS0
    E0: float = 0.0
    C_budget: Optional[float] = None

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = 2.0 - self.beta
        problems = []
        if not 0 < self.beta < 1:
            problems.append(f"beta must lie in (0, 1) (got {self.beta})")
        if not 1 < self.alpha <= 2:
            problems.append(f"alpha must lie in (1, 2] (got {self.alpha})")
        if not self.K >= 1:
            problems.append(f"K must be at least 1 (got {self.K})")
        if not self.eps0 > 0:
            problems.append(f"eps0 must be positive (got {self.eps0})")
        if self.k < 0:
            problems.append(f"k must be non-negative (got {self.k})")
        if problems:
            raise LojParameterError("Invalid Lojasiewicz parameters: " + "; ".join(problems))

    @property
    def levels(self) -> np.ndarray:
        """Critical levels 4 pi n, n = 0 .. k."""
        return FOUR_PI * np.arange(self.k + 1)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Certificate:
    """
    Outcome of one inequality check.

    `passed` holds iff ratio <= threshold * (1 + tolerance), both recorded in
    metadata (threshold defaults to 1). It is None for checks that only report.
    """

    inequality_id: str
    lhs: float
    rhs: float
    ratio: float
    inputs_digest: str
    passed: Optional[bool]
    status: str
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        """True unless the certificate failed (degenerate, recorded and not-applicable count as ok)."""
        return self.status != "fail"

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["pass"] = data.pop("passed")
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Certificate":
        data = dict(data)
        data["passed"] = data.pop("pass")
        return cls(**data)


def inputs_digest(state: Optional[State] = None, **inputs) -> str:
    """md5 over the state values and the JSON-encoded scalar inputs."""
    digest = hashlib.md5()
    if isinstance(state, SphereField):
        digest.update(state.digest().encode())
    elif isinstance(state, RadialProfile):
        digest.update(np.ascontiguousarray(state.r_nodes).tobytes())
        digest.update(np.ascontiguousarray(state.h_values).tobytes())
    digest.update(json.dumps(inputs, sort_keys=True, default=str).encode())
    return digest.hexdigest()


def _judge(
    inequality_id: str,
    lhs: float,
    rhs: float,
    tolerance: float,
    digest: str,
    metadata: Dict[str, Any],
    threshold: float = 1.0,
    violation: Optional[str] = None,
) -> Certificate:
    metadata = dict(metadata, tolerance=tolerance, threshold=threshold)
    if abs(lhs) <= DEGENERATE_LEVEL and abs(rhs) <= DEGENERATE_LEVEL:
        return Certificate(inequality_id, lhs, rhs, 0.0, digest, True, "degenerate", metadata)
    if rhs <= 0.0:
        metadata["reason"] = violation or "zero-right-side"
        return Certificate(inequality_id, lhs, rhs, math.inf, digest, False, "fail", metadata)
    ratio = lhs / rhs
    passed = ratio <= threshold * (1.0 + tolerance)
    return Certificate(inequality_id, lhs, rhs, ratio, digest, passed, "pass" if passed else "fail", metadata)


def _stencil_spacing(terms, tau: float) -> float:
    """Grid spacing for 2-D terms; largest radial spacing inside 4 sqrt(tau) for profiles."""
    if hasattr(terms, "profile"):
        inside = terms.r <= max(4.0 * math.sqrt(tau), terms.r[1])
        return float(np.max(terms.profile.local_spacing[inside]))
    return terms.spacing


def _certificate_tolerance(terms, tau: float, base: float) -> Dict[str, float]:
    spacing = _stencil_spacing(terms, tau)
    stencil = STENCIL_FACTOR * spacing ** 2 / tau
    weight_tail = math.exp(-terms.reach ** 2 / (4.0 * tau))
    return {"base": base, "stencil_bound": stencil, "weight_tail": weight_tail, "total": base + stencil + weight_tail}


def check_poincare_rdu(
    u: State,
    tau: float,
    center: Sequence[float] = (0.0, 0.0),
    tolerance: float = settings.POINCARE_TOLERANCE,
) -> Certificate:
    """
    Certify ||r du||_tau <= 4 tau ||T_hat_tau(u)||_tau.

    Args:
        u: SphereField or RadialProfile
        tau: Gaussian scale
        center: Weight center
        tolerance: Base relative tolerance (discretization terms are added)

    Returns:
        Certificate "poincare-rdu"
    """
    terms = state_terms(u, center)
    q = terms.weighted(tau)
    tol = _certificate_tolerance(terms, tau, tolerance)
    metadata = {"tau": tau, "tail_bound": q["tail"], "tolerances": tol, "spacing": _stencil_spacing(terms, tau)}
    return _judge(
        "poincare-rdu",
        float(q["norm_rdu"]),
        4.0 * tau * float(q["norm_That"]),
        tol["total"],
        inputs_digest(u, tau=tau, center=list(center)),
        metadata,
        violation="poincare-violation",
    )


def check_poincare_T(
    u: State,
    tau: float,
    center: Sequence[float] = (0.0, 0.0),
    tolerance: float = settings.POINCARE_TOLERANCE,
) -> Certificate:
    """Certify ||T(u)||_tau <= 3 ||T_hat_tau(u)||_tau."""
    terms = state_terms(u, center)
    q = terms.weighted(tau)
    tol = _certificate_tolerance(terms, tau, tolerance)
    metadata = {"tau": tau, "tail_bound": q["tail"], "tolerances": tol, "spacing": _stencil_spacing(terms, tau)}
    return _judge(
        "poincare-T",
        float(q["norm_T"]),
        3.0 * float(q["norm_That"]),
        tol["total"],
        inputs_digest(u, tau=tau, center=list(center)),
        metadata,
        violation="poincare-violation",
    )


def lambda_scale(u: State, eps0: float = settings.EPS0) -> float:
    """
    Smallest node radius lambda in [0, 1] with int_{B_2 minus B_lambda} |du|^2 <= eps0.

    Nodes at equal radius are grouped, so the result is a node radius (or 0).
    """
    if not eps0 > 0:
        raise ValueError(f"eps0 must be positive (got {eps0})")

    if isinstance(u, RadialProfile):
        r = u.r_nodes[u.r_nodes < 2.0]
        cumulative = u.cumulative_energy()[: len(r)]
        total = 2.0 * float(np.interp(2.0, u.r_nodes, u.cumulative_energy()))
        radii = r
        tail = total - 2.0 * cumulative
    else:
        terms = state_terms(u)
        radius = u.grid.radius()
        inside = radius < 2.0
        radii, inverse = np.unique(radius[inside], return_inverse=True)
        energies = np.bincount(inverse, weights=terms.density[inside] * terms.area)
        tail = np.cumsum(energies[::-1])[::-1]

    if len(radii) == 0 or tail[0] <= eps0:
        return 0.0
    index = int(np.searchsorted(-tail, -eps0, side="left"))
    if index >= len(radii):
        return 1.0
    return float(min(radii[index], 1.0))


def loj_certificate(u: State, params: LojParams) -> Certificate:
    """
    Lojasiewicz gap |Phi_1(u) - 4 pi n| against ||T_hat_1(u)||_1^(2 - beta).

    n is the nearest level in {0, .., k} (ties go to the smaller n). Without
    params.C_budget, or outside the small-norm regime ||T_hat||^2 <= eps0,
    the ratio is recorded without a pass judgment.
    """
    terms = state_terms(u)
    q = terms.weighted(1.0)
    Phi = float(q["Phi"])
    norm_That = float(q["norm_That"])
    exponent = 2.0 - params.beta

    gaps = np.abs(Phi - params.levels)
    n = int(np.argmin(gaps))
    tie = bool(np.count_nonzero(np.isclose(gaps, gaps[n], rtol=0.0, atol=1e-12)) > 1)
    lhs = float(gaps[n])
    rhs = norm_That ** exponent

    large_norm = norm_That ** 2 > params.eps0
    metadata = {
        "n": n,
        "Phi": Phi,
        "norm_That": norm_That,
        "exponent": exponent,
        "tie": tie,
        "energy": terms.energy,
        "large_norm_regime": large_norm,
        "tail_bound": q["tail"],
        "spacing": _stencil_spacing(terms, 1.0),
    }
    digest = inputs_digest(u, **params.to_dict())

    if terms.energy > FOUR_PI * params.k * 1.01:
        metadata["reason"] = "energy-above-cap"
        return Certificate("lojasiewicz", lhs, rhs, lhs / rhs if rhs > 0 else math.inf, digest, None, "not-applicable", metadata)
    if lhs <= DEGENERATE_LEVEL and rhs <= DEGENERATE_LEVEL:
        return Certificate("lojasiewicz", lhs, rhs, 0.0, digest, True, "degenerate", metadata)
    ratio = lhs / rhs if rhs > 0 else math.inf
    if large_norm or params.C_budget is None:
        return Certificate("lojasiewicz", lhs, rhs, ratio, digest, None, "recorded", metadata)
    tol = _certificate_tolerance(terms, 1.0, 0.0)["total"]
    return _judge("lojasiewicz", lhs, rhs, tol, digest, metadata, threshold=params.C_budget)


def gronwall_barrier(eps: float, params: LojParams, s):
    """
    Barrier phi_bar(s) = (eps^(-(2 - alpha)/alpha) + 2 (2 - alpha) s / (K^2 alpha))^(-alpha/(2 - alpha)).

    alpha = 2 uses the limit eps * exp(-2 s / K^2).

    Args:
        eps: Initial value phi_bar(0), positive
        params: Supplies alpha and K
        s: Log-time (scalar or array), non-negative

    Returns:
        Barrier value(s), decreasing in s
    """
    if not eps > 0:
        raise LojParameterError(f"Barrier needs eps > 0 (got {eps})")
    s_values = np.asarray(s, dtype=float)
    if np.any(s_values < 0):
        raise ValueError("Barrier is defined for s >= 0")
    alpha, K = params.alpha, params.K
    if alpha == 2.0:
        value = eps * np.exp(-2.0 * s_values / K ** 2)
    else:
        base = eps ** (-(2.0 - alpha) / alpha) + 2.0 * (2.0 - alpha) * s_values / (K ** 2 * alpha)
        value = base ** (-alpha / (2.0 - alpha))
    return float(value) if value.ndim == 0 else value


def _admissible_records(flow_run: FlowRun) -> List[DiagnosticRecord]:
    """Usable records at or after T1 - R^2 (s >= 0)."""
    return [rec for rec in flow_run.usable_records() if rec.s >= 0.0]


def barrier_window(flow_run: FlowRun) -> Dict[str, float]:
    """
    Barrier start eps and log-time span S of a run.

    eps = max(phi(0), -phi(S), tiny) over the usable records with s >= 0,
    S = s of the last such record and lambda_run = R exp(-S).
    """
    records = _admissible_records(flow_run)
    if not records:
        return {"eps": math.nan, "S": 0.0, "lambda_run": flow_run.config.R, "s0": 0.0, "records": 0}
    first, last = records[0].phi, records[-1].phi
    S = records[-1].s
    return {
        "eps": max(first, -last, 1e-300),
        "S": S,
        "lambda_run": flow_run.config.R * math.exp(-S),
        "s0": records[0].s,
        "records": len(records),
    }


def _record_tolerance(flow_run: FlowRun, record: DiagnosticRecord) -> float:
    spacing = flow_run.resolution
    if flow_run.mode == "equivariant":
        p = flow_run.states[0]
        spacing = float(np.interp(math.sqrt(record.tau), p.r_nodes, p.local_spacing))
    reach = flow_run.config.grid.half_width
    return STENCIL_FACTOR * spacing ** 2 / record.tau + math.exp(-reach ** 2 / (4.0 * record.tau)) * max(record.energy, 1.0)


def check_flow_barriers(flow_run: FlowRun, params: LojParams) -> Dict[str, Any]:
    """
    Check -phi_bar(S - s) - tol <= phi(s) <= phi_bar(s) + tol record by record.

    Applicable when the entry value eps = max(phi(0), -phi(S)) is at most eps0.

    Returns:
        Report with status ("pass", "fail" or "not-applicable"), eps, S,
        worst margins and the list of violations (side, tolerance used)
    """
    window = barrier_window(flow_run)
    report = {"check": "gronwall-barriers", "params": params.to_dict(), **window}
    records = _admissible_records(flow_run)
    if not records or not window["eps"] <= params.eps0:
        report.update(status="not-applicable", reason="entry condition Phi_R2 <= E0 + eps with eps <= eps0 unmet")
        return report

    eps, S = window["eps"], window["S"]
    worst_upper, worst_lower = math.inf, math.inf
    violations = []
    for record in records:
        tol = _record_tolerance(flow_run, record)
        upper = gronwall_barrier(eps, params, record.s - window["s0"])
        lower = -gronwall_barrier(eps, params, max(S - record.s, 0.0))
        upper_margin = upper + tol - record.phi
        lower_margin = record.phi - (lower - tol)
        worst_upper = min(worst_upper, upper_margin)
        worst_lower = min(worst_lower, lower_margin)
        if upper_margin < 0:
            violations.append({"t": record.t, "s": record.s, "phi": record.phi, "bound": upper, "side": "upper", "tolerance": tol})
        if lower_margin < 0:
            violations.append({"t": record.t, "s": record.s, "phi": record.phi, "bound": lower, "side": "lower", "tolerance": tol})

    report.update(
        status="fail" if violations else "pass",
        worst_upper_margin=worst_upper,
        worst_lower_margin=worst_lower,
        violations=violations,
    )
    if violations:
        logger.warning(f"⚠️  Barrier violated at {len(violations)} record(s)")
    return report


def check_psi_integral_bound(
    flow_run: FlowRun,
    params: LojParams,
    s: float = 0.0,
    tolerance: float = settings.POINCARE_TOLERANCE,
) -> Certificate:
    """
    Certify int psi <= 4 int delta <= (8 alpha / (alpha - 1)) K phi_bar(s)^((alpha - 1)/alpha)
    over [s, S - s], plus the pointwise psi <= 4 delta (1 + tol) on every usable record.

    Args:
        flow_run: Completed run
        params: alpha and K of the Lojasiewicz hypothesis
        s: Window start, at most S/2
        tolerance: Relative slack of the pointwise check

    Returns:
        Certificate "psi-integral" (lhs/rhs of the first link; the second link
        and the pointwise sub-certificate are in metadata)
    """
    window = barrier_window(flow_run)
    S = window["S"]
    if s > S / 2.0 + 1e-12:
        raise ValueError(f"psi integral window needs s <= S/2 (s={s}, S={S})")
    digest = inputs_digest(None, run=[r.t for r in flow_run.records], s=s, **params.to_dict())

    usable = flow_run.usable_records()
    pointwise = [rec.psi / (4.0 * rec.delta) if rec.delta > 0 else (0.0 if rec.psi == 0 else math.inf) for rec in usable]
    pointwise_failures = [rec.t for rec, ratio in zip(usable, pointwise) if ratio > 1.0 + tolerance]
    metadata = {
        "window": [s, S - s],
        "S": S,
        "pointwise": {
            "worst_ratio": max(pointwise, default=0.0),
            "failures": pointwise_failures,
            "passed": not pointwise_failures,
        },
    }

    start = window["s0"] + s
    inside = [rec for rec in usable if start - 1e-12 <= rec.s <= S - s + 1e-12]
    metadata["records"] = len(inside)
    if len(inside) < 8:
        if pointwise_failures:
            metadata["reason"] = "pointwise psi <= 4 delta violated"
            worst = metadata["pointwise"]["worst_ratio"]
            return Certificate("psi-integral", 0.0, 0.0, worst, digest, False, "fail", metadata)
        return Certificate("psi-integral", 0.0, 0.0, 0.0, digest, None, "under-sampled", metadata)

    sigma = np.array([rec.s for rec in inside])
    psi_integral = float(trapezoid([rec.psi for rec in inside], sigma))
    delta_integral = float(trapezoid([rec.delta for rec in inside], sigma))

    alpha, K = params.alpha, params.K
    barrier = gronwall_barrier(window["eps"], params, s) if window["eps"] > 0 else 0.0
    chain_rhs = 8.0 * alpha / (alpha - 1.0) * K * barrier ** ((alpha - 1.0) / alpha)
    chain_ok = 4.0 * delta_integral <= chain_rhs * (1.0 + tolerance)
    metadata["barrier_link"] = {"lhs": 4.0 * delta_integral, "rhs": chain_rhs, "passed": chain_ok}

    certificate = _judge("psi-integral", psi_integral, 4.0 * delta_integral, tolerance, digest, metadata)
    # pointwise failures override every status, degenerate included
    if pointwise_failures or (certificate.status == "pass" and not chain_ok):
        certificate.passed, certificate.status = False, "fail"
    return certificate


def check_monotonicity_residuals(flow_run: FlowRun) -> Dict[str, Any]:
    """
    Residuals of d/dt Phi_tau + ||T_hat_tau||^2 = 0 and d/dt Psi_tau + ||r T_hat_tau||^2 = 0.

    Derivatives are divided differences between consecutive usable records;
    the squared norms are averaged over each interval (trapezoid rule).

    Returns:
        Report with maximum and mean residuals, relative residuals and the
        signed check that Phi never increases by more than 10 h^2 per unit time
    """
    records = flow_run.usable_records()
    report = {"check": "monotonicity", "records": len(records), "h": flow_run.resolution, "dt": flow_run.dt}
    if len(records) < 2:
        report.update(status="under-sampled", residual_phi_max=0.0, residual_psi_max=0.0,
                      residual_phi_mean=0.0, residual_psi_mean=0.0, phi_increases=[])
        return report

    t = np.array([rec.t for rec in records])
    Phi = np.array([rec.Phi for rec in records])
    Psi = np.array([rec.Psi for rec in records])
    That2 = np.array([rec.norm_That for rec in records]) ** 2
    rThat2 = np.array([rec.norm_rThat for rec in records]) ** 2

    dt = np.diff(t)
    residual_phi = np.abs(np.diff(Phi) / dt + 0.5 * (That2[1:] + That2[:-1]))
    residual_psi = np.abs(np.diff(Psi) / dt + 0.5 * (rThat2[1:] + rThat2[:-1]))
    scale_phi = max(float(np.mean(That2)), 1e-300)
    scale_psi = max(float(np.mean(rThat2)), 1e-300)

    allowance = STENCIL_FACTOR * report["h"] ** 2 * dt * np.maximum(Phi[:-1], 1.0)
    increases = np.diff(Phi)
    bad = [
        {"t": float(t[i + 1]), "increase": float(increases[i]), "allowed": float(allowance[i])}
        for i in np.flatnonzero(increases > allowance)
    ]
    report.update(
        status="fail" if bad else "pass",
        residual_phi_max=float(np.max(residual_phi)),
        residual_psi_max=float(np.max(residual_psi)),
        residual_phi_mean=float(np.mean(residual_phi)),
        residual_psi_mean=float(np.mean(residual_psi)),
        relative_phi=float(np.mean(residual_phi)) / scale_phi,
        relative_psi=float(np.mean(residual_psi)) / scale_psi,
        phi_increases=bad,
    )
    return report


def fit_order(hs: Sequence[float], errors: Sequence[float]) -> float:
    """
    Least-squares slope of log(error) against log(h).

    Args:
        hs: Mesh sizes
        errors: Positive errors, one per mesh size

    Returns:
        Observed convergence order
    """
    hs, errors = np.asarray(hs, dtype=float), np.asarray(errors, dtype=float)
    if hs.shape != errors.shape or len(hs) < 2:
        raise ValueError("fit_order needs at least two (h, error) pairs")
    if np.any(errors <= 0) or np.any(hs <= 0):
        raise ValueError("fit_order needs positive mesh sizes and errors")
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)


def monotonicity_refinement_study(
    initial: Callable[[Grid], SphereField],
    config: FlowConfig,
    nodes: Iterable[int] = (64, 128, 256),
    min_order: float = 0.9,
) -> Dict[str, Any]:
    """
    Monotonicity residuals under simultaneous (h, dt) refinement.

    The diagnostic stride stays fixed in steps, so the record spacing shrinks
    with dt = dt_safety h^2.

    Args:
        initial: Builds the initial field on a given grid
        config: Base configuration (its grid is replaced per level)
        nodes: Nodes per side of each level
        min_order: Required fitted order

    Returns:
        Report with per-level residuals and fitted orders
    """
    levels = []
    for n in tqdm(list(nodes), desc="Refinement levels"):
        grid = Grid(config.grid.half_width, n)
        level_run = run_flow(replace(config, grid=grid), initial(grid))
        residuals = check_monotonicity_residuals(level_run)
        levels.append({
            "nodes": n,
            "h": grid.spacing,
            "dt": level_run.dt,
            "residual_phi": residuals["residual_phi_mean"],
            "residual_psi": residuals["residual_psi_mean"],
            "status": residuals["status"],
        })
        logger.info(f"✓ N={n}: Phi residual {residuals['residual_phi_mean']:.3e}, Psi residual {residuals['residual_psi_mean']:.3e}")

    hs = [level["h"] for level in levels]
    order_phi = fit_order(hs, [level["residual_phi"] for level in levels])
    order_psi = fit_order(hs, [level["residual_psi"] for level in levels])
    passed = order_phi >= min_order and order_psi >= min_order and all(level["status"] == "pass" for level in levels)
    return {
        "check": "monotonicity-refinement",
        "levels": levels,
        "order_phi": order_phi,
        "order_psi": order_psi,
        "min_order": min_order,
        "status": "pass" if passed else "fail",
    }


def check_psi_bar_claim(flow_run: FlowRun, kappa: float = 1.0) -> Dict[str, Any]:
    """
    Check psi_bar(s) <= eta exp(-kappa s) + exp(4 + 4 kappa) int_0^s psi(sigma) exp(kappa (sigma - s)) dsigma.

    eta is the value recorded at the first usable record with s >= 0.
    """
    records = _admissible_records(flow_run)
    report = {"check": "psi-bar-claim", "kappa": kappa, "records": len(records)}
    if not records:
        report.update(status="not-applicable", worst_ratio=0.0)
        return report

    eta = records[0].eta
    s0 = records[0].s
    sigma = np.array([rec.s - s0 for rec in records])
    psi = np.array([rec.psi for rec in records])
    worst, failures = 0.0, []
    for i, record in enumerate(records):
        s = sigma[i]
        integral = float(trapezoid(psi[: i + 1] * np.exp(kappa * (sigma[: i + 1] - s)), sigma[: i + 1])) if i else 0.0
        rhs = eta * math.exp(-kappa * s) + math.exp(4.0 + 4.0 * kappa) * integral
        if rhs <= 0:
            ratio = 0.0 if record.psi_bar <= DEGENERATE_LEVEL else math.inf
        else:
            ratio = record.psi_bar / rhs
        worst = max(worst, ratio)
        if ratio > 1.0:
            failures.append(record.t)
    degenerate = all(rec.psi_bar <= DEGENERATE_LEVEL for rec in records)
    report.update(
        eta=eta,
        worst_ratio=worst,
        failures=failures,
        status="degenerate" if degenerate else ("fail" if failures else "pass"),
    )
    return report


def fit_lojasiewicz_constant(
    source: Union[FlowRun, Sequence[Certificate]],
    alpha: float,
) -> float:
    """
    K = max(1, max |phi|^(1/alpha) / delta).

    A FlowRun contributes its usable records with s >= 0; Lojasiewicz
    certificates contribute lhs^(1/alpha) / ||T_hat_1||_1 (tau = 1).
    """
    ratios = []
    if isinstance(source, FlowRun):
        for record in _admissible_records(source):
            if record.delta > 0:
                ratios.append(abs(record.phi) ** (1.0 / alpha) / record.delta)
    else:
        for certificate in source:
            norm = certificate.metadata.get("norm_That", 0.0)
            if certificate.inequality_id == "lojasiewicz" and norm > 0:
                ratios.append(certificate.lhs ** (1.0 / alpha) / norm)
    return float(max([1.0] + ratios))


def select_entry_radius(
    flow_run: FlowRun,
    params: LojParams,
    candidates: Optional[Sequence[float]] = None,
) -> Optional[float]:
    """
    Largest R <= sqrt(T1) whose barrier entry value eps is at most eps0.

    Candidates default to sqrt(T1) / 2^k, k = 0 .. 6. Returns None if none qualifies.
    """
    T1 = flow_run.config.T1
    if candidates is None:
        candidates = [math.sqrt(T1) / 2.0 ** k for k in range(7)]
    for R in sorted(candidates, reverse=True):
        if not 0 < R <= math.sqrt(T1):
            continue
        rebuilt = recompute_diagnostics(flow_run, T1, R, params.E0)
        eps = barrier_window(rebuilt)["eps"]
        if eps <= params.eps0:
            return float(R)
    return None


def estimate_critical_level(flow_run: FlowRun, window: int = 5) -> Dict[str, float]:
    """
    Critical level E0 from the last `window` usable Phi values, snapped to 4 pi n.
    """
    records = flow_run.usable_records()[-window:]
    raw = float(np.mean([rec.Phi for rec in records])) if records else 0.0
    n = int(round(raw / FOUR_PI))
    return {"raw": raw, "n": n, "level": FOUR_PI * n, "gap": abs(raw - FOUR_PI * n)}
