"""
Sphere-valued fields on a truncated plane.

A SphereField samples a map u : R^2 -> S^2 at the nodes of a uniform grid over
[-L, L]^2. Maps are constant outside the grid: the outermost two node rings
hold the boundary value and stay frozen during flow.
"""
import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

BOUNDARY_RINGS = 2
NORTH_POLE = np.array([0.0, 0.0, 1.0])
UNIT_NORM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Grid:
    """
    Uniform node grid covering [-L, L]^2.

    Args:
        half_width: L, half the side length of the square
        nodes: N, nodes per side (at least 16)
    """

    half_width: float
    nodes: int

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError(f"Grid half width must be positive (got {self.half_width})")
        if int(self.nodes) != self.nodes or self.nodes < 16:
            raise ValueError(f"Grid needs at least 16 nodes per side (got {self.nodes})")

    @property
    def spacing(self) -> float:
        """Node spacing h = 2L/(N-1)."""
        return 2.0 * self.half_width / (self.nodes - 1)

    @cached_property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.nodes)

    def coordinates(self, center: Sequence[float] = (0.0, 0.0)) -> Tuple[np.ndarray, np.ndarray]:
        """Node coordinates relative to center, indexed [i, j] with x1 along i."""
        x1, x2 = np.meshgrid(self.axis - center[0], self.axis - center[1], indexing="ij")
        return x1, x2

    def radius(self, center: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
        x1, x2 = self.coordinates(center)
        return np.hypot(x1, x2)

    def ring_mask(self, rings: int = BOUNDARY_RINGS) -> np.ndarray:
        """True on the outermost `rings` node rings."""
        mask = np.zeros((self.nodes, self.nodes), dtype=bool)
        mask[:rings, :] = True
        mask[-rings:, :] = True
        mask[:, :rings] = True
        mask[:, -rings:] = True
        return mask

    def interior_mask(self, rings: int = BOUNDARY_RINGS + 1) -> np.ndarray:
        return ~self.ring_mask(rings)

    def distance_to_edge(self, center: Sequence[float] = (0.0, 0.0)) -> float:
        """Distance from center to the nearest side of the square."""
        return self.half_width - max(abs(center[0]), abs(center[1]))


@dataclass(frozen=True)
class Measurement:
    """A scalar result together with accuracy metadata."""

    value: float
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __float__(self) -> float:
        return float(self.value)


@dataclass
class VectorField3:
    """A 3-vector per node (tension, twisted tension, partial derivatives)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.nodes, self.grid.nodes, 3):
            raise ValueError(f"VectorField3 shape {self.values.shape} does not match grid")

    def norm_squared(self) -> np.ndarray:
        return squared_norm(self.values)


@dataclass
class SymTensorField:
    """Symmetric 2x2 tensor per node, stored as S_11, S_12, S_22."""

    grid: Grid
    s11: np.ndarray
    s12: np.ndarray
    s22: np.ndarray

    def trace(self) -> np.ndarray:
        return self.s11 + self.s22

    def sup_norm(self) -> float:
        return float(np.max(np.abs(np.stack([self.s11, self.s12, self.s22]))))


def squared_norm(vectors: np.ndarray) -> np.ndarray:
    """
    |v|^2 over the last axis, summed in sorted order.

    Sorting the squares makes the result independent of component order and
    sign, so signed permutations of the target act exactly.
    """
    squares = np.sort(vectors * vectors, axis=-1)
    return squares[..., 0] + squares[..., 1] + squares[..., 2]


def normalize(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("Cannot project a zero vector onto the sphere")
    return vectors / norms


@dataclass
class SphereField:
    """
    Discrete map u : R^2 -> S^2.

    Args:
        grid: Node grid
        values: Unit 3-vectors, shape (N, N, 3)
        boundary_value: Unit 3-vector held on the outer two rings
        metadata: Free-form JSON-compatible annotations (warnings, provenance)
    """

    grid: Grid
    values: np.ndarray
    boundary_value: np.ndarray = field(default_factory=lambda: NORTH_POLE.copy())
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.boundary_value = np.asarray(self.boundary_value, dtype=np.float64)
        if self.values.shape != (self.grid.nodes, self.grid.nodes, 3):
            raise ValueError(f"SphereField shape {self.values.shape} does not match grid")

    @classmethod
    def from_values(
        cls,
        grid: Grid,
        values: np.ndarray,
        boundary_value: Optional[np.ndarray] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> "SphereField":
        """
        Build a field from arbitrary nonzero vectors.

        Values are projected onto the sphere and the outer two rings are set
        to the boundary value.

        Args:
            grid: Node grid
            values: Nonzero 3-vectors, shape (N, N, 3)
            boundary_value: Value at infinity (defaults to the north pole)
            metadata: Annotations carried by the field

        Returns:
            SphereField satisfying the unit-norm and boundary-ring invariants
        """
        boundary = normalize(np.asarray(NORTH_POLE if boundary_value is None else boundary_value, dtype=float))
        projected = normalize(np.asarray(values, dtype=np.float64))
        projected[grid.ring_mask()] = boundary
        return cls(grid=grid, values=projected, boundary_value=boundary, metadata=dict(metadata or {}))

    @classmethod
    def constant(cls, grid: Grid, value: Sequence[float] = (0.0, 0.0, 1.0)) -> "SphereField":
        vec = normalize(np.asarray(value, dtype=float))
        return cls.from_values(grid, np.broadcast_to(vec, (grid.nodes, grid.nodes, 3)).copy(), vec)

    def with_values(self, values: np.ndarray) -> "SphereField":
        """Same grid, boundary and metadata with new (already unit) node values."""
        return SphereField(self.grid, values, self.boundary_value.copy(), dict(self.metadata))

    def invariant_violations(self, tolerance: float = UNIT_NORM_TOLERANCE) -> Dict[str, float]:
        """Return the size of every violated invariant (empty when valid)."""
        problems = {}
        norm_error = float(np.max(np.abs(np.linalg.norm(self.values, axis=-1) - 1.0)))
        if norm_error > tolerance:
            problems["unit_norm"] = norm_error
        ring_error = float(np.max(np.abs(self.values[self.grid.ring_mask()] - self.boundary_value)))
        if ring_error > tolerance:
            problems["boundary_rings"] = ring_error
        return problems

    def sample(self, points: np.ndarray) -> np.ndarray:
        """
        Bilinear sample of u at arbitrary points, renormalized.

        Points outside the grid take the boundary value.

        Args:
            points: Array (..., 2) of plane coordinates

        Returns:
            Unit vectors, shape (..., 3)
        """
        points = np.asarray(points, dtype=float)
        shape = points.shape[:-1]
        flat = points.reshape(-1, 2)
        L, h = self.grid.half_width, self.grid.spacing
        index = ((flat + L) / h).T
        sampled = np.stack(
            [map_coordinates(self.values[..., c], index, order=1, mode="nearest") for c in range(3)],
            axis=-1,
        )
        outside = np.any(np.abs(flat) > L, axis=-1)
        sampled[outside] = self.boundary_value
        return normalize(sampled).reshape(shape + (3,))

    def digest(self) -> str:
        """Content hash of the node values (stable across runs on one platform)."""
        return hashlib.md5(np.ascontiguousarray(self.values).tobytes()).hexdigest()
