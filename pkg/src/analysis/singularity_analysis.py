"""
Concentration detection, bubble extraction, the energy identity, neck
oscillation and the body map of a concentrating flow.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.ndimage import maximum_filter

from config import settings
from src.analysis.inequality_lab import FOUR_PI, LojParams, barrier_window, fit_order
from src.diagnostics.gaussian_diagnostics import State, state_terms
from src.errors import UnderResolvedError
from src.fields.field_core import BLEND_INNER, BLEND_OUTER, blend_to_value, local_energy, refined_energy_density
from src.fields.radial_profile import RadialProfile
from src.fields.sphere_field import NORTH_POLE, Grid, SphereField
from src.flow.flow_engine import FlowRun, step_2d

logger = logging.getLogger(__name__)

MERGE_FACTOR = 4.0
POLISH_STEPS = 200
POLISH_SAFETY = 0.2
HARMONIC_TOLERANCE = 0.05
PLATEAU_VARIATION = 0.2
NECK_FACTOR = 8.0
DEFAULT_TARGET = Grid(20.0, 321)


@dataclass
class Concentration:
    """
    A detected energy concentration.

    Args:
        center: Plane point of the |du|^2 maximum
        scale: Smallest radius whose ball holds eps0 energy
        energy: Energy within MERGE_FACTOR * scale
        bubble_scale: Scale of the degree-1 bubble holding eps0 within `scale`
        flags: "nested" when a merged neighbour had a scale at least 8 times smaller or larger
    """

    center: Tuple[float, float]
    scale: float
    energy: float
    bubble_scale: float
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": list(self.center),
            "scale": self.scale,
            "energy": self.energy,
            "bubble_scale": self.bubble_scale,
            "flags": list(self.flags),
        }


@dataclass
class BubbleReport:
    """Rescaled limit extracted at a concentration point."""

    center: Tuple[float, float]
    scale: float
    degree_estimate: int
    energy: float
    limit_value: np.ndarray
    extraction_snapshot: SphereField
    harmonic_like: bool
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": list(self.center),
            "scale": self.scale,
            "degree_estimate": self.degree_estimate,
            "energy": self.energy,
            "limit_value": [float(c) for c in self.limit_value],
            "harmonic_like": self.harmonic_like,
            "snapshot_digest": self.extraction_snapshot.digest(),
            "metadata": self.metadata,
        }


@dataclass
class OscillationProfile:
    """Oscillation of u on a family of annuli, each at its own time."""

    annuli: List[Tuple[float, float]]
    osc_values: List[float]
    times: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {"annuli": [list(a) for a in self.annuli], "osc_values": self.osc_values, "times": self.times}


def _bubble_scale(radius: float, eps0: float) -> float:
    if eps0 >= FOUR_PI:
        return radius
    return radius * math.sqrt(FOUR_PI / eps0 - 1.0)


def _enclosing_radius(radii: np.ndarray, energies: np.ndarray, eps0: float) -> Optional[float]:
    """Smallest radius whose disk holds at least eps0 (radii sorted ascending)."""
    cumulative = np.cumsum(energies)
    index = int(np.searchsorted(cumulative, eps0, side="left"))
    if index >= len(radii):
        return None
    return float(radii[index])


def detect_concentration(u: State, eps0: float = settings.EPS0, max_candidates: int = 64) -> List[Concentration]:
    """
    Greedy scan over local maxima of |du|^2.

    Each maximum gets scale = smallest r with E(B_r) >= eps0 (skipped when
    that exceeds L/4). Maxima closer than 4x the larger scale are merged and
    the one with more energy inside 4x its scale survives. Radial profiles
    are scanned at the origin only.

    Args:
        u: SphereField or RadialProfile
        eps0: Energy threshold
        max_candidates: Strongest maxima examined

    Returns:
        Concentrations sorted by decreasing energy
    """
    if not eps0 > 0:
        raise ValueError(f"eps0 must be positive (got {eps0})")

    if isinstance(u, RadialProfile):
        cumulative = u.cumulative_energy()
        index = int(np.searchsorted(cumulative, eps0, side="left"))
        if index >= len(u.r_nodes) or u.r_nodes[index] > u.r_max / 4.0:
            return []
        scale = float(u.r_nodes[index])
        energy = u.local_energy(MERGE_FACTOR * scale).value
        return [Concentration((0.0, 0.0), scale, energy, _bubble_scale(scale, eps0))]

    terms = state_terms(u)
    density = terms.density
    peak = float(np.max(density))
    if peak <= 0.0:
        return []
    maxima = (density == maximum_filter(density, size=3, mode="nearest")) & (density > 1e-12 * peak)
    maxima &= u.grid.interior_mask()
    candidates = np.argwhere(maxima)
    order = np.argsort(-density[maxima], kind="stable")[:max_candidates]

    axis = u.grid.axis
    area = terms.area
    accepted: List[Concentration] = []
    for i, j in candidates[order]:
        center = (float(axis[i]), float(axis[j]))
        radius = u.grid.radius(center)
        sort = np.argsort(radius, axis=None, kind="stable")
        radii = radius.ravel()[sort]
        scale = _enclosing_radius(radii, 0.5 * density.ravel()[sort] * area, eps0)
        if scale is None or scale > u.grid.half_width / 4.0:
            continue
        energy = local_energy(u, center, MERGE_FACTOR * scale, density).value
        candidate = Concentration(center, scale, energy, _bubble_scale(scale, eps0))

        merged = False
        for k, other in enumerate(accepted):
            distance = math.hypot(center[0] - other.center[0], center[1] - other.center[1])
            if distance < MERGE_FACTOR * max(scale, other.scale):
                merged = True
                ratio = max(scale, other.scale) / min(scale, other.scale)
                survivor = candidate if candidate.energy > other.energy else other
                if ratio >= NECK_FACTOR and "nested" not in survivor.flags:
                    survivor.flags.append("nested")
                accepted[k] = survivor
                break
        if not merged:
            accepted.append(candidate)

    accepted.sort(key=lambda c: -c.energy)
    if accepted:
        logger.info(f"✓ Detected {len(accepted)} concentration point(s)")
    return accepted


def _equivariant_values(p: RadialProfile, points: np.ndarray) -> np.ndarray:
    r = np.hypot(points[..., 0], points[..., 1])
    theta = np.arctan2(points[..., 1], points[..., 0])
    h = p(r)
    return np.stack([np.cos(p.m * theta) * np.sin(h), np.sin(p.m * theta) * np.sin(h), np.cos(h)], axis=-1)


def sample_state(state: State, points: np.ndarray) -> np.ndarray:
    """Unit vectors of a state at arbitrary plane points."""
    if isinstance(state, RadialProfile):
        return _equivariant_values(state, np.asarray(points, dtype=float))
    return state.sample(points)


def _resolution_at(state: State, radius: float) -> float:
    if isinstance(state, RadialProfile):
        return float(np.interp(radius, state.r_nodes, state.local_spacing))
    return state.grid.spacing


def _mean_direction(values: np.ndarray) -> Optional[np.ndarray]:
    mean = np.mean(values.reshape(-1, 3), axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        return None
    return mean / norm


def extract_bubble(
    u: State,
    center: Sequence[float],
    scale: float,
    target_grid: Grid = DEFAULT_TARGET,
    polish_steps: int = POLISH_STEPS,
) -> BubbleReport:
    """
    Rescale u around center by `scale`, relax it by a short flow and read off its degree.

    Args:
        u: SphereField or RadialProfile (profiles only at the origin)
        center: Concentration point
        scale: Rescaling length, at least twice the local resolution
        target_grid: Grid of the rescaled map
        polish_steps: step_2d iterations at dt = 0.2 h^2

    Returns:
        BubbleReport with degree = round(E / 4 pi) over B_(0.8 L_target)
    """
    center = (float(center[0]), float(center[1]))
    resolution = _resolution_at(u, scale)
    if scale < 2.0 * resolution:
        raise UnderResolvedError(f"Extraction scale {scale:g} is below twice the resolution {resolution:g}")
    if isinstance(u, RadialProfile) and center != (0.0, 0.0):
        raise ValueError("Radial profiles can only be rescaled about the origin")

    y1, y2 = target_grid.coordinates()
    points = np.stack([center[0] + scale * y1, center[1] + scale * y2], axis=-1)
    values = sample_state(u, points)

    limit = _mean_direction(values[target_grid.ring_mask(rings=1)])
    if limit is None:
        limit = NORTH_POLE.copy()
    L_t = target_grid.half_width
    values = blend_to_value(values, target_grid.radius(), limit, BLEND_INNER * L_t, BLEND_OUTER * L_t)
    extracted = SphereField.from_values(target_grid, values, limit, {"kind": "extracted", "scale": scale})

    dt = POLISH_SAFETY * target_grid.spacing ** 2
    raw_energy = local_energy(extracted, (0.0, 0.0), BLEND_INNER * L_t).value
    for _ in range(polish_steps):
        extracted = step_2d(extracted, dt)

    energy = local_energy(extracted, (0.0, 0.0), BLEND_INNER * L_t).value
    degree = int(round(energy / FOUR_PI))
    harmonic_like = degree >= 1 and abs(energy - FOUR_PI * degree) <= HARMONIC_TOLERANCE * FOUR_PI * degree
    metadata = {"raw_energy": raw_energy, "polish_steps": polish_steps, "target": [target_grid.half_width, target_grid.nodes]}
    if not harmonic_like:
        metadata["flag"] = "non-bubble" if degree == 0 else "off-level"
    return BubbleReport(center, float(scale), degree, float(energy), limit, extracted, harmonic_like, metadata)


def _default_radii(state: State, center: Sequence[float], smallest: float) -> List[float]:
    if isinstance(state, RadialProfile):
        largest = state.r_max / 2.0
    else:
        largest = state.grid.distance_to_edge(center) / 2.0
    radii = []
    r = largest
    while r >= smallest and len(radii) < 24:
        radii.append(r)
        r /= 2.0
    return radii


def energy_identity_table(
    u: State,
    p: Sequence[float] = (0.0, 0.0),
    radii: Optional[Sequence[float]] = None,
    eps0: float = settings.EPS0,
) -> Dict[str, Any]:
    """
    Energy identity at one time: E(u, B_r(p)) over radii against the sum of 4 pi degree over extracted bubbles.

    The plateau is read at the innermost radius at least 8 times the largest
    bubble scale; it is inconclusive when E changes by more than 20% across
    the last dyadic step.
    """
    p = (float(p[0]), float(p[1]))
    found = detect_concentration(u, eps0)
    reach = max(radii) if radii else None
    bubbles = []
    for concentration in found:
        distance = math.hypot(concentration.center[0] - p[0], concentration.center[1] - p[1])
        if reach is not None and distance >= reach:
            continue
        try:
            bubbles.append(extract_bubble(u, concentration.center, concentration.bubble_scale))
        except UnderResolvedError as e:
            logger.warning(f"⚠️  Skipping bubble at {concentration.center}: {e}")
    total = float(sum(FOUR_PI * b.degree_estimate for b in bubbles))

    neck = NECK_FACTOR * max([b.scale for b in bubbles], default=0.0)
    smallest = max(neck, 4.0 * _resolution_at(u, 0.0))
    if radii is None:
        radii = _default_radii(u, p, smallest)
    radii = sorted((float(r) for r in radii), reverse=True)

    density = None if isinstance(u, RadialProfile) else refined_energy_density(u)
    energies = []
    for r in radii:
        if isinstance(u, RadialProfile):
            energies.append(u.local_energy(r).value)
        else:
            energies.append(local_energy(u, p, r, density).value)

    rows = []
    for r, E in zip(radii, energies):
        gap = abs(E - total) / total if total > 0 else E
        rows.append({"r": r, "E_inner": E, "sum_bubbles": total, "gap": gap})

    usable = [i for i, r in enumerate(radii) if r >= smallest]
    status = "ok"
    plateau = energies[usable[-1]] if usable else (energies[-1] if energies else 0.0)
    if len(usable) >= 2:
        inner, outer = energies[usable[-1]], energies[usable[-2]]
        variation = abs(outer - inner) / max(abs(outer), abs(inner), 1e-300)
        if variation > PLATEAU_VARIATION and max(abs(outer), abs(inner)) > 1e-12:
            status = "inconclusive"
    else:
        status = "inconclusive" if bubbles else "ok"

    gap = abs(plateau - total) / total if total > 0 else plateau
    return {
        "center": list(p),
        "bubbles": [b.to_dict() for b in bubbles],
        "bubble_reports": bubbles,
        "sum_bubbles": total,
        "plateau": plateau,
        "gap": gap,
        "status": status,
        "rows": rows,
    }


def energy_identity_check(
    flow_run: FlowRun,
    p: Sequence[float] = (0.0, 0.0),
    radii: Optional[Sequence[float]] = None,
    eps0: float = settings.EPS0,
) -> Dict[str, Any]:
    """Energy identity at the last state of a run (see energy_identity_table)."""
    report = energy_identity_table(flow_run.final_state, p, radii, eps0)
    report.update(t=flow_run.t_stop, concentrated=flow_run.concentrated)
    if not flow_run.concentrated:
        report["note"] = "run stopped at t_end without concentration"
    logger.info(
        f"✓ Energy identity: plateau {report['plateau']:.5f}, bubbles {report['sum_bubbles']:.5f}, "
        f"gap {report['gap']:.3%} ({report['status']})"
    )
    return report


def _diameter_estimate(values: np.ndarray) -> float:
    """Twice the largest geodesic distance to the mean direction, capped at pi."""
    mean = _mean_direction(values)
    if mean is None:
        return math.pi
    chord = np.linalg.norm(values.reshape(-1, 3) - mean, axis=-1)
    distance = 2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))
    return float(min(2.0 * np.max(distance), math.pi))


def _annulus_oscillation(u: State, center: Sequence[float], r_in: float, r_out: float) -> float:
    """Oscillation on r_in <= |x - center| <= r_out; r_in may be 0."""
    if isinstance(u, RadialProfile):
        if tuple(center) != (0.0, 0.0):
            raise ValueError("Radial profiles only support annuli about the origin")
        start = max(r_in, u.r_nodes[1])
        r = np.geomspace(start, r_out, 256)
        if r_in == 0.0:
            r = np.concatenate([[0.0], r])
        h = u(r)
        weights = r * np.gradient(r)
        mean_cos = float(np.sum(weights * np.cos(h)) / np.sum(weights))
        if abs(mean_cos) < 1e-12:
            return math.pi
        angle = np.arccos(np.clip(np.cos(h), -1.0, 1.0))
        distance = angle if mean_cos > 0 else math.pi - angle
        return float(min(2.0 * np.max(distance), math.pi))

    radius = u.grid.radius(center)
    inside = (radius >= r_in) & (radius <= r_out)
    if not np.any(inside):
        raise UnderResolvedError(f"Annulus [{r_in:g}, {r_out:g}] contains no grid nodes")
    return _diameter_estimate(u.values[inside])


def oscillation(u: State, center: Sequence[float], r_in: float, r_out: float) -> float:
    """
    Geodesic diameter estimate of u on the annulus r_in <= |x - center| <= r_out.

    Args:
        u: SphereField or RadialProfile
        center: Annulus center
        r_in: Inner radius, at least the grid spacing
        r_out: Outer radius, above r_in and at most L

    Returns:
        Angle in [0, pi]
    """
    reach = u.r_max if isinstance(u, RadialProfile) else u.grid.half_width
    resolution = _resolution_at(u, r_in)
    if not resolution <= r_in < r_out <= reach:
        raise ValueError(f"oscillation needs h <= r_in < r_out <= L (h={resolution:g}, r_in={r_in:g}, r_out={r_out:g})")
    return _annulus_oscillation(u, center, r_in, r_out)


def _psi_series(records) -> Tuple[np.ndarray, np.ndarray]:
    s = np.array([rec.s for rec in records])
    return s, np.array([rec.psi for rec in records])


def check_rdu_bound(
    flow_run: FlowRun,
    kappa: float = 1.0,
    r_range: Optional[Sequence[float]] = None,
    eps0: float = settings.EPS0,
) -> Dict[str, Any]:
    """
    Empirical constant in r |du| <= C (int_0^log(R/r) psi e^(kappa (sigma - log R/r)) dsigma + eta (r/R)^kappa).

    For each r the left side is the largest r |du| on |x| = r over usable
    records with t >= T1 - r^2/4.
    """
    config = flow_run.config
    records = [rec for rec in flow_run.usable_records() if rec.s >= 0.0]
    report = {"check": "rdu-bound", "kappa": kappa}
    if not records:
        report.update(status="not-applicable", reason="no usable records after T1 - R^2")
        return report
    sup_psi2 = max(rec.psi ** 2 for rec in records)
    if sup_psi2 > eps0:
        report.update(status="not-applicable", reason=f"sup psi^2 = {sup_psi2:.3g} exceeds eps0", sup_psi2=sup_psi2)
        return report

    R = config.R
    if r_range is None:
        r_range = [R / 2.0 ** k for k in range(1, 7)]
    sigma, psi = _psi_series(records)
    s0 = sigma[0]
    eta = records[0].eta
    indices = {id(rec): i for i, rec in enumerate(flow_run.records)}

    rows = []
    for r in r_range:
        if r < _resolution_at(flow_run.states[0], r):
            continue
        s_r = math.log(R / r)
        grid_sigma = np.linspace(0.0, s_r, 200)
        psi_values = np.interp(grid_sigma + s0, sigma, psi)
        rhs = float(trapezoid(psi_values * np.exp(kappa * (grid_sigma - s_r)), grid_sigma)) + eta * (r / R) ** kappa
        window = [rec for rec in records if rec.t >= config.T1 - r * r / 4.0]
        lhs = max((state_terms(flow_run.states[indices[id(rec)]]).ring_rdu(r) for rec in window), default=0.0)
        C = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
        rows.append({"r": r, "lhs": lhs, "rhs": rhs, "C": C, "records": len(window)})

    constants = [row["C"] for row in rows if row["records"] and math.isfinite(row["C"])]
    positive = [c for c in constants if c > 0]
    stability = max(positive) / min(positive) if len(positive) >= 2 else 1.0
    degenerate = all(row["lhs"] == 0.0 for row in rows)
    report.update(
        status="degenerate" if degenerate else "ok",
        C_kappa=max(constants, default=0.0),
        stability=stability,
        rows=rows,
        eta=eta,
    )
    return report


def _oscillation_radii(flow_run: FlowRun, lambda_run: float) -> List[Tuple[float, float, float, State]]:
    """(r, r_in, t, state) for dyadic r with annulus [lambda_run R / r, r] at t(r) = T1 - r^2/4."""
    config = flow_run.config
    R = config.R
    out = []
    for k in range(1, 24):
        r = R / 2.0 ** k
        r_in = lambda_run * R / r
        if r_in >= r / 2.0:
            break
        t, state = flow_run.state_at(config.T1 - r * r / 4.0)
        if r_in < _resolution_at(state, r_in):
            continue
        out.append((r, r_in, t, state))
    return out


def check_oscillation_bound(flow_run: FlowRun, params: LojParams) -> Dict[str, Any]:
    """
    Oscillation on the annuli [lambda R / r, r] at t(r) = T1 - r^2/4 against the barrier forms.

    alpha = 2: fitted log-log slope of osc against r, expected >= min(1/K, 1) - 0.3.
    alpha < 2: fitted power of osc against (eps^((alpha - 2)/alpha) + log R/r),
    expected within 50% of (alpha - 1)/(alpha - 2).
    """
    window = barrier_window(flow_run)
    lambda_run = window["lambda_run"]
    samples = _oscillation_radii(flow_run, lambda_run)
    profile = OscillationProfile(
        annuli=[(r_in, r) for r, r_in, _, _ in samples],
        osc_values=[_annulus_oscillation(state, (0.0, 0.0), r_in, r) for r, r_in, _, state in samples],
        times=[t for _, _, t, _ in samples],
    )
    report = {
        "check": "oscillation-bound",
        "alpha": params.alpha,
        "K": params.K,
        "lambda_run": lambda_run,
        "profile": profile.to_dict(),
        "annuli": len(samples),
    }
    if len(samples) < 4:
        report.update(status="under-sampled")
        return report

    r = np.array([a[1] for a in profile.annuli])
    osc = np.array(profile.osc_values)
    positive = osc > 0
    if np.count_nonzero(positive) < 2:
        report.update(status="degenerate", note="oscillation vanishes; fit skipped")
        return report

    if params.alpha == 2.0:
        slope = fit_order(r[positive], osc[positive])
        expected = min(1.0 / params.K, 1.0) - 0.3
        report.update(fitted_exponent=slope, expected_minimum=expected, status="pass" if slope >= expected else "fail")
    else:
        eps = window["eps"] if window["eps"] > 0 else 1.0
        alpha = params.alpha
        variable = eps ** ((alpha - 2.0) / alpha) + np.log(flow_run.config.R / r)
        power = fit_order(variable[positive], osc[positive])
        target = (alpha - 1.0) / (alpha - 2.0)
        within = abs(power - target) <= 0.5 * abs(target)
        report.update(fitted_exponent=power, expected_exponent=target, status="pass" if within else "fail")
    return report


@dataclass
class BodyMap:
    """Body map of a run about p with its empirical modulus of continuity."""

    state: State
    center: Tuple[float, float]
    concentration_scale: float
    limit_value: np.ndarray
    table: List[Dict[str, float]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": list(self.center),
            "concentration_scale": self.concentration_scale,
            "limit_value": [float(c) for c in self.limit_value],
            "table": self.table,
        }


def body_map(flow_run: FlowRun, p: Sequence[float] = (0.0, 0.0), eps0: float = settings.EPS0) -> BodyMap:
    """
    Body map about p: the last state plus Osc over r_in <= |x - p| <= r at t(r) = T1 - r^2/4.

    r_in = max(8 x concentration scale, resolution). The limit value u(p, T)
    is the mean direction on [r_in, 2 r_in] of the last state.
    """
    p = (float(p[0]), float(p[1]))
    final = flow_run.final_state
    nearby = [
        c for c in detect_concentration(final, eps0)
        if math.hypot(c.center[0] - p[0], c.center[1] - p[1]) < NECK_FACTOR * c.bubble_scale + c.scale
    ] if flow_run.concentrated else []
    scale = max([c.bubble_scale for c in nearby], default=0.0)
    r_in = max(NECK_FACTOR * scale, _resolution_at(final, NECK_FACTOR * scale))

    points = _ring_points(p, r_in, 2.0 * r_in)
    limit = _mean_direction(sample_state(final, points))
    if limit is None:
        limit = NORTH_POLE.copy()

    table = []
    R = flow_run.config.R
    for k in range(0, 24):
        r = R / 2.0 ** k
        if r < 2.0 * r_in:
            break
        t, state = flow_run.state_at(flow_run.config.T1 - r * r / 4.0)
        table.append({"r": r, "t": t, "r_in": r_in, "osc": _annulus_oscillation(state, p, r_in, r)})
    return BodyMap(final, p, scale, limit, table)


def _ring_points(center: Tuple[float, float], r_in: float, r_out: float, count: int = 64) -> np.ndarray:
    radii = np.linspace(r_in, r_out, 8)
    angles = np.linspace(0.0, 2.0 * np.pi, count, endpoint=False)
    rr, aa = np.meshgrid(radii, angles, indexing="ij")
    return np.stack([center[0] + rr * np.cos(aa), center[1] + rr * np.sin(aa)], axis=-1)


def geodesic_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two unit vectors."""
    return float(2.0 * np.arcsin(np.clip(np.linalg.norm(np.asarray(a) - np.asarray(b)) / 2.0, 0.0, 1.0)))
