"""
Equivariant (corotational) maps u(r, theta) = (cos m theta sin h, sin m theta sin h, cos h).

A RadialProfile stores h on a geometrically graded radial grid that starts
with the node r = 0 (where h = 0) and ends at r_max = L, where h is frozen.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

from src.fields.sphere_field import Measurement

DEFAULT_FIRST_SPACING = 1e-4
DEFAULT_RATIO = 1.02


def radial_grid(
    half_width: float,
    first_spacing: float = DEFAULT_FIRST_SPACING,
    ratio: float = DEFAULT_RATIO,
) -> np.ndarray:
    """
    Nodes 0 = r_0 < r_1 < ... < r_M = L with geometric spacings.

    Args:
        half_width: Outer radius L
        first_spacing: r_1 as a fraction of L
        ratio: Spacing growth factor

    Returns:
        Node radii; the last node is exactly L
    """
    if not half_width > 0 or not first_spacing > 0 or not ratio >= 1.0:
        raise ValueError("radial_grid needs L > 0, first_spacing > 0 and ratio >= 1")
    spacing = first_spacing * half_width
    steps = [spacing]
    while sum(steps) < half_width:
        steps.append(steps[-1] * ratio)
    nodes = np.concatenate([[0.0], np.cumsum(steps)])
    nodes *= half_width / nodes[-1]
    nodes[-1] = half_width
    return nodes


def bubble_profile(r: np.ndarray, scale: float) -> np.ndarray:
    """Stationary degree-1 profile 2 arctan(r / scale)."""
    return 2.0 * np.arctan(np.asarray(r, dtype=float) / scale)


def overshoot_profile(r: np.ndarray, scale: float, overshoot: float) -> np.ndarray:
    """
    Initial data that concentrates: (1 + overshoot) * 2 arctan(r / scale).

    With overshoot > 0 and L large against scale the frozen end value exceeds
    pi, which forces the profile to blow up at the origin.
    """
    return (1.0 + overshoot) * bubble_profile(r, scale)


@dataclass
class RadialProfile:
    """
    Angle profile h(r) of an m-equivariant map.

    Args:
        r_nodes: Increasing radii with r_nodes[0] = 0
        h_values: Angles in radians, h_values[0] = 0
        m: Corotation index (positive integer)
        metadata: Free-form annotations
    """

    r_nodes: np.ndarray
    h_values: np.ndarray
    m: int = 1
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.r_nodes = np.asarray(self.r_nodes, dtype=np.float64)
        self.h_values = np.asarray(self.h_values, dtype=np.float64).copy()
        if self.r_nodes.shape != self.h_values.shape or self.r_nodes.ndim != 1:
            raise ValueError("RadialProfile needs matching 1-D node and value arrays")
        if self.r_nodes[0] != 0.0 or np.any(np.diff(self.r_nodes) <= 0):
            raise ValueError("RadialProfile nodes must start at 0 and increase strictly")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"Corotation index must be a positive integer (got {self.m})")
        self.h_values[0] = 0.0

    @property
    def r_max(self) -> float:
        return float(self.r_nodes[-1])

    @cached_property
    def spacings(self) -> np.ndarray:
        return np.diff(self.r_nodes)

    @property
    def min_spacing(self) -> float:
        return float(self.spacings[0])

    @cached_property
    def cell_widths(self) -> np.ndarray:
        """Control-volume widths w_i (half cells at both ends)."""
        widths = np.empty_like(self.r_nodes)
        widths[1:-1] = 0.5 * (self.r_nodes[2:] - self.r_nodes[:-2])
        widths[0] = 0.5 * self.spacings[0]
        widths[-1] = 0.5 * self.spacings[-1]
        return widths

    @cached_property
    def local_spacing(self) -> np.ndarray:
        """Largest adjacent spacing at each node."""
        gaps = self.spacings
        return np.concatenate([[gaps[0]], np.maximum(gaps[:-1], gaps[1:]), [gaps[-1]]])

    def with_values(self, h_values: np.ndarray) -> "RadialProfile":
        return RadialProfile(self.r_nodes, h_values, self.m, dict(self.metadata))

    def rescaled(self, scale: float) -> "RadialProfile":
        """Profile of u(scale * x): same values on nodes r / scale."""
        return RadialProfile(self.r_nodes / scale, self.h_values, self.m, dict(self.metadata))

    @property
    def boundary_value(self) -> np.ndarray:
        """Pole nearest to the frozen end value h(r_max)."""
        return np.array([0.0, 0.0, 1.0 if np.cos(self.h_values[-1]) >= 0 else -1.0])

    def spline(self) -> CubicSpline:
        return CubicSpline(self.r_nodes, self.h_values)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        """h at arbitrary radii; radii beyond r_max take h(r_max)."""
        r = np.asarray(r, dtype=float)
        return np.where(r >= self.r_max, self.h_values[-1], self.spline()(np.clip(r, 0.0, self.r_max)))

    def radial_derivative(self) -> np.ndarray:
        return np.gradient(self.h_values, self.r_nodes, edge_order=2)

    def energy_density(self) -> np.ndarray:
        """|du|^2 = h_r^2 + m^2 sin^2(h) / r^2 at the nodes."""
        h_r = self.radial_derivative()
        r = self.r_nodes
        angular = np.empty_like(r)
        angular[1:] = self.m ** 2 * np.sin(self.h_values[1:]) ** 2 / r[1:] ** 2
        angular[0] = h_r[0] ** 2 if self.m == 1 else 0.0
        return h_r ** 2 + angular

    def energy(self) -> float:
        """
        Discrete energy pi * int (h_r^2 + m^2 sin^2 h / r^2) r dr.

        Edge differences for h_r and lumped node weights for the angular term;
        this is the functional the semi-implicit step dissipates.
        """
        r = self.r_nodes
        mid = 0.5 * (r[1:] + r[:-1])
        radial = np.sum(mid * np.diff(self.h_values) ** 2 / self.spacings)
        angular = np.sum(np.sin(self.h_values[1:]) ** 2 / r[1:] * self.cell_widths[1:])
        return float(np.pi * (radial + self.m ** 2 * angular))

    def cumulative_energy(self) -> np.ndarray:
        """E(B_r) at every node, by trapezoid quadrature of pi |du|^2 r."""
        return cumulative_trapezoid(np.pi * self.energy_density() * self.r_nodes, self.r_nodes, initial=0.0)

    def local_energy(self, radius: float) -> Measurement:
        """Energy on B_radius(0), interpolated between nodes."""
        if not radius > 0:
            raise ValueError(f"local_energy needs a positive radius (got {radius})")
        value = float(np.interp(min(radius, self.r_max), self.r_nodes, self.cumulative_energy()))
        return Measurement(value, {"truncated": bool(radius > self.r_max), "radius": float(radius)})
