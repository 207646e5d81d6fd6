"""
Gaussian-weighted functionals of harmonic map flow.

    ||f||_tau  = sqrt(int |f|^2 e^{-r^2/4tau} dV)
    Phi_tau(u) = 1/2 int |du|^2 e^{-r^2/4tau} dV
    Psi_tau(u) = 1/2 int r^2 |du|^2 e^{-r^2/4tau} dV
    T_hat_tau  = T(u) - (x / 2tau) _| du

All quantities take an explicit center. Grid fields use midpoint sums; radial
profiles use radial quadrature (see radial_diagnostics). Results beyond the
full-accuracy range 4 sqrt(tau) <= distance to the edge carry a tail bound.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.diagnostics.radial_diagnostics import ProfileTerms
from src.fields.field_core import gradient, local_energy, refined_energy_density, tension, dirichlet_energy
from src.fields.radial_profile import RadialProfile
from src.fields.sphere_field import Grid, Measurement, SphereField, VectorField3, squared_norm

logger = logging.getLogger(__name__)

State = Union[SphereField, RadialProfile]

ANNULUS_COUNT = 6


@dataclass(frozen=True)
class WeightedScale:
    """
    Gaussian scale tau and weight center.

    Args:
        tau: Positive scale (length^2)
        center: Weight center (defaults to the origin)
    """

    tau: float
    center: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"Gaussian scale tau must be positive (got {self.tau})")

    @property
    def support_radius(self) -> float:
        return 4.0 * math.sqrt(self.tau)

    def fits(self, reach: float) -> bool:
        """Full-accuracy mode: 4 sqrt(tau) within `reach` of the center."""
        return self.support_radius <= reach

    def weight(self, grid: Grid) -> np.ndarray:
        x1, x2 = grid.coordinates(self.center)
        return np.exp(-(x1 ** 2 + x2 ** 2) / (4.0 * self.tau))


@dataclass
class DiagnosticRecord:
    """One time's worth of weighted quantities along a flow."""

    t: float
    tau: float
    Phi: float
    Psi: float
    norm_That: float
    norm_T: float
    norm_rdu: float
    phi: float
    psi: float
    delta: float
    eta: float
    s: float
    annulus_energies: List[List[float]] = field(default_factory=list)
    norm_rThat: float = 0.0
    psi_bar: float = 0.0
    energy: float = 0.0
    max_du: float = 0.0
    near_stop: bool = False
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DiagnosticRecord":
        return cls(**data)


class GridTerms:
    """
    Pointwise terms of a SphereField about a center, reused across scales.

    Args:
        u: Grid field
        center: Weight center
    """

    def __init__(self, u: SphereField, center: Sequence[float] = (0.0, 0.0)):
        self.field = u
        self.center = tuple(float(c) for c in center)
        d1, d2 = gradient(u)
        x1, x2 = u.grid.coordinates(self.center)
        self.r2 = x1 ** 2 + x2 ** 2
        self.density = refined_energy_density(u)
        self.central_density = d1.norm_squared() + d2.norm_squared()
        self.xdu = x1[..., None] * d1.values + x2[..., None] * d2.values
        self.tension = tension(u).values
        self.area = u.grid.spacing ** 2
        self.reach = u.grid.distance_to_edge(self.center)
        self.spacing = u.grid.spacing

    @property
    def energy(self) -> float:
        return dirichlet_energy(self.field)

    @property
    def max_du(self) -> float:
        return float(np.sqrt(np.max(self.central_density)))

    def annulus_energy(self, r_in: float, r_out: float) -> float:
        outer = local_energy(self.field, self.center, r_out, self.density).value
        inner = local_energy(self.field, self.center, r_in, self.density).value
        return outer - inner

    def weighted(self, tau: float) -> Dict[str, float]:
        """Every weighted quantity at scale tau."""
        weight = np.exp(-self.r2 / (4.0 * tau)) * self.area
        twisted = self.tension - self.xdu / (2.0 * tau)
        twisted_sq = squared_norm(twisted)
        total = 0.5 * float(np.sum(self.density)) * self.area
        return {
            "Phi": 0.5 * float(np.sum(self.density * weight)),
            "Psi": 0.5 * float(np.sum(self.r2 * self.density * weight)),
            "psi_r4": float(np.sum(self.r2 ** 2 * self.density * weight)),
            "norm_That": math.sqrt(float(np.sum(twisted_sq * weight))),
            "norm_T": math.sqrt(float(np.sum(squared_norm(self.tension) * weight))),
            "norm_rdu": math.sqrt(float(np.sum(self.r2 * self.central_density * weight))),
            "norm_rThat": math.sqrt(float(np.sum(self.r2 * twisted_sq * weight))),
            "norm_xdu": math.sqrt(float(np.sum(squared_norm(self.xdu) * weight))),
            "That_dot_xdu": float(np.sum(np.sum(twisted * self.xdu, axis=-1) * weight)),
            "tail": math.exp(-self.reach ** 2 / (4.0 * tau)) * total,
        }

    def ring_rdu(self, radius: float) -> float:
        """max r |du| over nodes within h/2 of the circle |x - center| = radius."""
        r = np.sqrt(self.r2)
        ring = np.abs(r - radius) <= 0.5 * self.spacing
        if not np.any(ring):
            return 0.0
        return float(np.max(r[ring] * np.sqrt(self.central_density[ring])))


def state_terms(state: State, center: Sequence[float] = (0.0, 0.0)):
    """GridTerms or ProfileTerms for a state (profiles are centered at the origin)."""
    if isinstance(state, RadialProfile):
        if tuple(center) != (0.0, 0.0):
            raise ValueError("Radial profiles only support weights centered at the origin")
        return ProfileTerms(state)
    return GridTerms(state, center)


def weighted_norm(
    f: Union[VectorField3, np.ndarray],
    scale: WeightedScale,
    grid: Optional[Grid] = None,
) -> Measurement:
    """
    Weighted L2 norm ||f||_tau by midpoint quadrature.

    Args:
        f: VectorField3 or scalar node array (then `grid` is required)
        scale: Gaussian scale and center
        grid: Grid of a scalar array

    Returns:
        Measurement with metadata {"full_accuracy", "tail_bound"}
    """
    if isinstance(f, VectorField3):
        grid = f.grid
        squares = f.norm_squared()
    else:
        if grid is None:
            raise ValueError("weighted_norm of a scalar array needs its grid")
        squares = np.asarray(f, dtype=float) ** 2
    area = grid.spacing ** 2
    value = math.sqrt(float(np.sum(squares * scale.weight(grid))) * area)
    reach = grid.distance_to_edge(scale.center)
    tail = math.sqrt(math.exp(-reach ** 2 / (4.0 * scale.tau)) * float(np.sum(squares)) * area)
    return Measurement(value, {"full_accuracy": scale.fits(reach), "tail_bound": tail})


def x_contract_du(u: SphereField, center: Sequence[float] = (0.0, 0.0)) -> VectorField3:
    """x _| du = x1 d1u + x2 d2u with x relative to center."""
    d1, d2 = gradient(u)
    x1, x2 = u.grid.coordinates(center)
    return VectorField3(u.grid, x1[..., None] * d1.values + x2[..., None] * d2.values)


def twisted_tension(u: SphereField, scale: WeightedScale) -> VectorField3:
    """T_hat_tau(u) = T(u) - (1/2tau)(x1 d1u + x2 d2u)."""
    xdu = x_contract_du(u, scale.center)
    return VectorField3(u.grid, tension(u).values - xdu.values / (2.0 * scale.tau))


def weighted_quantities(state: State, scale: WeightedScale) -> Dict[str, float]:
    """Phi, Psi, the weighted norms and a tail bound at one scale."""
    return state_terms(state, scale.center).weighted(scale.tau)


def phi(state: State, scale: WeightedScale) -> float:
    """Phi_tau(u) = 1/2 int |du|^2 e^{-r^2/4tau} dV."""
    return weighted_quantities(state, scale)["Phi"]


def psi_quantity(state: State, scale: WeightedScale) -> float:
    """Psi_tau(u) = 1/2 int r^2 |du|^2 e^{-r^2/4tau} dV."""
    return weighted_quantities(state, scale)["Psi"]


def psi_r4(state: State, scale: WeightedScale) -> float:
    """int r^4 |du|^2 e^{-r^2/4tau} dV, the right side of the Psi identity."""
    return weighted_quantities(state, scale)["psi_r4"]


def poincare_identity_residual(state: State, scale: WeightedScale) -> Dict[str, float]:
    """
    Check -(1/4tau) ||r du||_tau^2 = int <T_hat_tau, x _| du> e^{-r^2/4tau} dV.

    Returns:
        {"lhs", "rhs", "relative_residual"}
    """
    q = weighted_quantities(state, scale)
    lhs = -q["norm_rdu"] ** 2 / (4.0 * scale.tau)
    rhs = q["That_dot_xdu"]
    denominator = max(abs(lhs), abs(rhs), 1e-300)
    return {"lhs": lhs, "rhs": rhs, "relative_residual": abs(lhs - rhs) / denominator}


def dyadic_annuli(R: float, count: int = ANNULUS_COUNT) -> List[Tuple[float, float]]:
    """[R/2^(k+1), R/2^k] for k = 0 .. count-1."""
    return [(R / 2.0 ** (k + 1), R / 2.0 ** k) for k in range(count)]


def record_diagnostics(
    state: State,
    t: float,
    T1: float,
    R: float,
    E0: float = 0.0,
    center: Sequence[float] = (0.0, 0.0),
    terms=None,
) -> DiagnosticRecord:
    """
    Assemble a DiagnosticRecord at time t with tau = T1 - t.

    Args:
        state: SphereField or RadialProfile at time t
        t: Flow time (must be below T1)
        T1: Presumptive singular time
        R: Outer parabolic radius, s = log(R / sqrt(T1 - t))
        E0: Critical level, phi = Phi_tau - E0
        center: Weight center
        terms: Precomputed state_terms(state, center)

    Returns:
        DiagnosticRecord with eta = sqrt(Psi_{4R^2}/R^2) and psi_bar = sqrt(Psi_{4tau}/tau)
    """
    if not t < T1:
        raise ValueError(f"record_diagnostics needs t < T1 (got t={t}, T1={T1})")
    if terms is None:
        terms = state_terms(state, center)

    tau = T1 - t
    q = terms.weighted(tau)
    Psi_outer = terms.weighted(4.0 * R * R)["Psi"]
    Psi_double = terms.weighted(4.0 * tau)["Psi"]

    flags = []
    if not WeightedScale(tau, tuple(center)).fits(terms.reach):
        flags.append("tau-exceeds-full-accuracy")

    return DiagnosticRecord(
        t=float(t),
        tau=float(tau),
        Phi=q["Phi"],
        Psi=q["Psi"],
        norm_That=float(q["norm_That"]),
        norm_T=float(q["norm_T"]),
        norm_rdu=float(q["norm_rdu"]),
        phi=q["Phi"] - E0,
        psi=math.sqrt(q["Psi"] / tau),
        delta=math.sqrt(tau) * float(q["norm_That"]),
        eta=math.sqrt(Psi_outer / (R * R)),
        s=math.log(R / math.sqrt(tau)),
        annulus_energies=[[r_in, r_out, terms.annulus_energy(r_in, r_out)] for r_in, r_out in dyadic_annuli(R)],
        norm_rThat=float(q["norm_rThat"]),
        psi_bar=math.sqrt(Psi_double / tau),
        energy=terms.energy,
        max_du=terms.max_du,
        flags=flags,
    )
