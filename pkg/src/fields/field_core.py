"""
Second-order discrete calculus for sphere-valued grid fields.

Derivatives, Laplacian, tension, energy densities and the stress-energy
tensor of a SphereField, plus the closed-form bubble constructors used as
oracles throughout the lab.

Conventions:
- values[i, j] sits at (x1, x2) = (axis[i], axis[j]); axis 0 carries d/dx1.
- The tension is the 5-point Laplacian plus rho5 * u, where rho5 is the edge
  energy density. This makes it tangent to the sphere and the exact negative
  gradient of dirichlet_energy.
"""
import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.fields.sphere_field import (
    NORTH_POLE,
    Grid,
    Measurement,
    SphereField,
    SymTensorField,
    VectorField3,
    normalize,
    squared_norm,
)

logger = logging.getLogger(__name__)

# Blend window for compactly supported constructions, as fractions of L
BLEND_INNER = 0.8
BLEND_OUTER = 0.9


def smooth_cutoff(radius: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """
    C-infinity step: 1 for radius <= inner, 0 for radius >= outer.

    Built from f(t) = exp(-1/t), so every derivative vanishes at both ends.
    """
    t = np.clip((np.asarray(radius, dtype=float) - inner) / (outer - inner), 0.0, 1.0)

    def bump(x):
        safe = np.where(x > 0, x, 1.0)
        return np.where(x > 0, np.exp(-1.0 / safe), 0.0)

    rise = bump(t)
    fall = bump(1.0 - t)
    return fall / (fall + rise)


def rotation_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    k = normalize(np.asarray(axis, dtype=float))
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def quarter_turn(axis: int, turns: int = 1) -> np.ndarray:
    """
    Exact rotation by turns * pi/2 about coordinate axis 0, 1 or 2.

    Entries are exactly 0 or +-1, so applying it permutes and negates
    components without rounding.
    """
    a, b = [i for i in range(3) if i != axis]
    step = np.eye(3)
    step[a, a] = 0.0
    step[b, b] = 0.0
    step[a, b] = -1.0
    step[b, a] = 1.0
    if axis == 1:
        step = step.T
    return np.linalg.matrix_power(step, turns % 4)


def rotate_field(u: SphereField, rotation: np.ndarray) -> SphereField:
    """Apply a target isometry Q to every value (and the boundary value)."""
    Q = np.asarray(rotation, dtype=float)
    return SphereField(u.grid, u.values @ Q.T, Q @ u.boundary_value, dict(u.metadata))


def _neighbour_views(values: np.ndarray, stride: int = 1):
    """Center plus the four axis neighbours at distance stride, edge-padded."""
    s = stride
    padded = np.pad(values, ((s, s), (s, s), (0, 0)), mode="edge")
    center = padded[s:-s, s:-s]
    return center, (padded[2 * s:, s:-s], padded[:-2 * s, s:-s], padded[s:-s, 2 * s:], padded[s:-s, :-2 * s])


def gradient(u: SphereField) -> Tuple[VectorField3, VectorField3]:
    """
    First derivatives of u.

    Central second-order differences in the interior and one-sided
    second-order differences on the outermost ring.

    Args:
        u: Sphere-valued field

    Returns:
        (d1u, d2u) as VectorField3
    """
    h = u.grid.spacing
    d1 = np.gradient(u.values, h, axis=0, edge_order=2)
    d2 = np.gradient(u.values, h, axis=1, edge_order=2)
    return VectorField3(u.grid, d1), VectorField3(u.grid, d2)


def energy_density(u: SphereField) -> np.ndarray:
    """|du|^2 = |d1u|^2 + |d2u|^2 from central differences."""
    d1, d2 = gradient(u)
    return d1.norm_squared() + d2.norm_squared()


def edge_energy_density(u: SphereField, stride: int = 1) -> np.ndarray:
    """
    rho5 = (1/2(sh)^2) * sum over the four neighbours at distance s*h of |u_nbr - u|^2.

    Summing rho5 * h^2 / 2 over all nodes gives dirichlet_energy (stride 1).
    """
    center, neighbours = _neighbour_views(u.values, stride)
    total = squared_norm(neighbours[0] - center)
    for nbr in neighbours[1:]:
        total = total + squared_norm(nbr - center)
    return total / (2.0 * (stride * u.grid.spacing) ** 2)


def refined_energy_density(u: SphereField) -> np.ndarray:
    """
    Fourth-order |du|^2 estimate used for energy quadratures.

    Richardson combination (4 rho5(h) - rho5(2h)) / 3, clipped at zero.
    """
    refined = (4.0 * edge_energy_density(u, 1) - edge_energy_density(u, 2)) / 3.0
    return np.maximum(refined, 0.0)


def laplacian(u: SphereField) -> np.ndarray:
    """5-point Laplacian of each component (edge-padded)."""
    center, neighbours = _neighbour_views(u.values, 1)
    total = neighbours[0] - center
    for nbr in neighbours[1:]:
        total = total + (nbr - center)
    return total / u.grid.spacing ** 2


def tension(u: SphereField) -> VectorField3:
    """
    Tension field T(u) = Lap5 u + rho5 u, zero on the frozen boundary rings.

    Args:
        u: Sphere-valued field

    Returns:
        VectorField3 tangent to the sphere at every node
    """
    values = laplacian(u) + edge_energy_density(u)[..., None] * u.values
    values[u.grid.ring_mask()] = 0.0
    return VectorField3(u.grid, values)


def dirichlet_energy(u: SphereField) -> float:
    """Discrete Dirichlet energy 1/2 * sum over grid edges of |u_a - u_b|^2."""
    along_1 = squared_norm(np.diff(u.values, axis=0))
    along_2 = squared_norm(np.diff(u.values, axis=1))
    return 0.5 * (float(np.sum(along_1)) + float(np.sum(along_2)))


def stress_energy(u: SphereField) -> SymTensorField:
    """S_ij = <d_i u, d_j u> - 1/2 delta_ij |du|^2, trace-free by construction."""
    d1, d2 = gradient(u)
    s11 = 0.5 * (d1.norm_squared() - d2.norm_squared())
    s12 = np.sum(d1.values * d2.values, axis=-1)
    return SymTensorField(u.grid, s11, s12, -s11)


def stress_divergence_residual(u: SphereField) -> float:
    """
    Max over interior nodes of |div(S)_j - <T(u), d_j u>|, j = 1, 2.

    Nodes within four rings of the edge are excluded (one-sided stencils).
    """
    h = u.grid.spacing
    d1, d2 = gradient(u)
    S = stress_energy(u)
    div_1 = np.gradient(S.s11, h, axis=0) + np.gradient(S.s12, h, axis=1)
    div_2 = np.gradient(S.s12, h, axis=0) + np.gradient(S.s22, h, axis=1)
    T = tension(u).values
    residual = np.maximum(
        np.abs(div_1 - np.sum(T * d1.values, axis=-1)),
        np.abs(div_2 - np.sum(T * d2.values, axis=-1)),
    )
    return float(np.max(residual[u.grid.interior_mask(rings=4)]))


def local_energy(
    u: SphereField,
    center: Sequence[float] = (0.0, 0.0),
    radius: float = 1.0,
    density: Optional[np.ndarray] = None,
) -> Measurement:
    """
    Energy of u on the open disk B_radius(center).

    Midpoint quadrature 1/2 * sum |du|^2 h^2 over nodes with |x - center| < radius.

    Args:
        u: Sphere-valued field
        center: Disk center
        radius: Disk radius (must be positive)
        density: Precomputed refined_energy_density(u), reused across calls

    Returns:
        Measurement with metadata {"truncated", "nodes", "radius"}
    """
    if not radius > 0:
        raise ValueError(f"local_energy needs a positive radius (got {radius})")
    if density is None:
        density = refined_energy_density(u)
    inside = u.grid.radius(center) < radius
    value = 0.5 * float(np.sum(density[inside])) * u.grid.spacing ** 2
    return Measurement(
        value,
        {
            "truncated": bool(radius > u.grid.distance_to_edge(center)),
            "nodes": int(np.count_nonzero(inside)),
            "radius": float(radius),
        },
    )


def blend_to_value(
    values: np.ndarray,
    radius: np.ndarray,
    target: np.ndarray,
    inner: float,
    outer: float,
) -> np.ndarray:
    """
    Geodesically blend unit vectors to a fixed target across [inner, outer].

    The angle to the target is scaled by smooth_cutoff(radius); nodes inside
    `inner` are returned untouched.
    """
    target = normalize(np.asarray(target, dtype=float))
    keep = smooth_cutoff(radius, inner, outer)[..., None]
    cos_t = np.clip(values @ target, -1.0, 1.0)[..., None]
    theta = 2.0 * np.arcsin(np.clip(np.linalg.norm(values - target, axis=-1, keepdims=True) / 2.0, 0.0, 1.0))
    perp = values - cos_t * target
    perp_norm = np.linalg.norm(perp, axis=-1, keepdims=True)
    fallback = np.cross(target, [1.0, 0.0, 0.0] if abs(target[0]) < 0.9 else [0.0, 1.0, 0.0])
    fallback = fallback / np.linalg.norm(fallback)
    direction = np.where(perp_norm > 1e-300, perp / np.where(perp_norm > 0, perp_norm, 1.0), fallback)
    blended = np.cos(keep * theta) * target + np.sin(keep * theta) * direction
    return np.where(keep < 1.0, blended, values)


def inverse_stereographic(w: np.ndarray) -> np.ndarray:
    """Map w in C to S^2 with 0 -> south pole and infinity -> north pole."""
    a = np.abs(w) ** 2
    return np.stack([2.0 * w.real, 2.0 * w.imag, a - 1.0], axis=-1) / (a + 1.0)[..., None]


def field_from_rational(
    grid: Grid,
    w: np.ndarray,
    rotation: Optional[np.ndarray] = None,
    metadata: Optional[dict] = None,
) -> SphereField:
    """
    Sphere field of a complex function on the grid, blended to the north pole
    on [0.8L, 0.9L] and then rotated as a whole.
    """
    L = grid.half_width
    values = blend_to_value(
        inverse_stereographic(w), grid.radius(), NORTH_POLE, BLEND_INNER * L, BLEND_OUTER * L
    )
    boundary = NORTH_POLE.copy()
    if rotation is not None:
        Q = np.asarray(rotation, dtype=float)
        values = values @ Q.T
        boundary = Q @ boundary
    return SphereField.from_values(grid, values, boundary, metadata)


def _scale_warnings(grid: Grid, scale: float) -> list:
    warnings = []
    if scale > grid.half_width / 10.0:
        warnings.append("truncation")
        logger.warning(f"⚠️  Bubble scale {scale:g} exceeds L/10: truncation error is no longer negligible")
    if scale < 2.0 * grid.spacing:
        warnings.append("under-resolved")
        logger.warning(f"⚠️  Bubble scale {scale:g} is below 2h = {2.0 * grid.spacing:g}")
    return warnings


def make_bubble(
    grid: Grid,
    degree: int = 1,
    scale: float = 0.1,
    center: Sequence[float] = (0.0, 0.0),
    rotation: Optional[np.ndarray] = None,
) -> SphereField:
    """
    Degree-n rational bubble w = ((z - center)/scale)^n.

    Args:
        grid: Node grid
        degree: Positive integer n (energy 4 pi n)
        scale: Bubble scale lambda
        center: Bubble center in the plane
        rotation: Optional SO(3) matrix applied to the whole field

    Returns:
        SphereField; the center maps to the south pole before rotation
    """
    if degree < 1:
        raise ValueError(f"Bubble degree must be positive (got {degree})")
    if not scale > 0:
        raise ValueError(f"Bubble scale must be positive (got {scale})")

    x1, x2 = grid.coordinates(center)
    w = ((x1 + 1j * x2) / scale) ** degree
    metadata = {
        "kind": "bubble",
        "degree": int(degree),
        "scale": float(scale),
        "center": [float(c) for c in center],
        "warnings": _scale_warnings(grid, scale),
    }
    return field_from_rational(grid, w, rotation, metadata)


def make_bubble_pair(
    grid: Grid,
    separation: float,
    scale: float,
    rotation: Optional[np.ndarray] = None,
) -> SphereField:
    """
    Degree-2 map w = (z - a)(z + a) / (2 a scale), a = separation / 2.

    Near z = +-a it is a degree-1 bubble of the given scale; total energy 8 pi.
    """
    if not separation > 0 or not scale > 0:
        raise ValueError("Bubble pair needs positive separation and scale")
    a = 0.5 * separation
    x1, x2 = grid.coordinates()
    z = x1 + 1j * x2
    w = (z - a) * (z + a) / (2.0 * a * scale)
    metadata = {
        "kind": "bubble_pair",
        "degree": 2,
        "scale": float(scale),
        "separation": float(separation),
        "warnings": _scale_warnings(grid, scale),
    }
    return field_from_rational(grid, w, rotation, metadata)


def field_from_function(
    grid: Grid,
    function,
    boundary_value: Optional[Sequence[float]] = None,
    metadata: Optional[dict] = None,
) -> SphereField:
    """Evaluate function(x1, x2) -> (N, N, 3) nonzero vectors and project onto S^2."""
    x1, x2 = grid.coordinates()
    return SphereField.from_values(grid, function(x1, x2), boundary_value, metadata)


def tangent_part(u: SphereField, vectors: np.ndarray) -> np.ndarray:
    """Pointwise projection of vectors onto the tangent planes of u."""
    return vectors - np.sum(vectors * u.values, axis=-1, keepdims=True) * u.values


def perturb(u: SphereField, direction: np.ndarray, step: float) -> SphereField:
    """Projected perturbation Pi(u + step * direction) with the boundary rings kept."""
    return SphereField.from_values(u.grid, u.values + step * direction, u.boundary_value, u.metadata)


def gradient_check(u: SphereField, direction: np.ndarray, step: float = 1e-4) -> Dict[str, float]:
    """
    Compare a central difference of dirichlet_energy along Pi(u + s v) with -h^2 sum <T(u), v>.

    The direction is projected onto the tangent planes and zeroed on the
    boundary rings before use.

    Args:
        u: Base field
        direction: Arbitrary vectors, shape (N, N, 3)
        step: Finite-difference step s

    Returns:
        {"numeric", "analytic", "relative_error"}
    """
    v = tangent_part(u, np.asarray(direction, dtype=float))
    v[u.grid.ring_mask()] = 0.0
    forward = dirichlet_energy(perturb(u, v, step))
    backward = dirichlet_energy(perturb(u, v, -step))
    numeric = (forward - backward) / (2.0 * step)
    analytic = -u.grid.spacing ** 2 * float(np.sum(tension(u).values * v))
    error = abs(numeric - analytic) / max(abs(analytic), 1e-300)
    return {"numeric": numeric, "analytic": analytic, "relative_error": error}
