"""
Seeded corpus of test maps for the snapshot inequalities.

Members span degrees 0 to 2: centered and off-center bubbles, a bubble pair,
perturbed bubbles, equivariant lifts and band-limited random fields. Every
member's Dirichlet energy stays below 12 pi. The same seed and grid always
give the same fields (and therefore the same digests).
"""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from config import settings
from src.fields.field_core import (
    dirichlet_energy,
    make_bubble,
    make_bubble_pair,
    perturb,
    rotation_matrix,
    smooth_cutoff,
    tangent_part,
)
from src.fields.radial_profile import RadialProfile, bubble_profile, radial_grid
from src.fields.snapshot_io import read_sfld, write_sfld
from src.fields.sphere_field import NORTH_POLE, Grid, SphereField, normalize
from src.flow.flow_engine import lift

logger = logging.getLogger(__name__)

ENERGY_CAP = 12.0 * math.pi
# Members are built below this fraction of the cap so every energy estimate agrees
CAP_MARGIN = 0.9
MANIFEST_NAME = "manifest.json"


@dataclass
class MapSpec:
    """
    How a corpus member was built.

    Args:
        kind: bubble | off_center | bubble_pair | perturbed_bubble | equivariant | random | constant
        params: Construction parameters (JSON-compatible)
        tag: Provenance tag, unique within a corpus
    """

    kind: str
    params: Dict[str, Any]
    tag: str


@dataclass
class CorpusMember:
    spec: MapSpec
    field: SphereField

    @property
    def digest(self) -> str:
        return self.field.digest()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tag": self.spec.tag,
            "kind": self.spec.kind,
            "params": self.spec.params,
            "digest": self.digest,
            "energy": dirichlet_energy(self.field),
        }


@dataclass
class Corpus:
    seed: int
    grid: Grid
    members: List[CorpusMember] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[CorpusMember]:
        return iter(self.members)

    def digests(self) -> List[str]:
        return [member.digest for member in self.members]

    def manifest(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "grid": {"L": self.grid.half_width, "N": self.grid.nodes},
            "members": [member.to_dict() for member in self.members],
        }


def band_limited_field(grid: Grid, rng: np.random.Generator, length_scale: float) -> np.ndarray:
    """
    Random smooth 3-vector field with a Gaussian power spectrum.

    Args:
        grid: Node grid
        rng: Seeded generator
        length_scale: Correlation length in plane units

    Returns:
        Array (N, N, 3) scaled so the largest vector has norm 1
    """
    k = 2.0 * np.pi * np.fft.fftfreq(grid.nodes, d=grid.spacing)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    amplitude = np.exp(-(k1 ** 2 + k2 ** 2) * length_scale ** 2 / 4.0)
    channels = []
    for _ in range(3):
        modes = (rng.standard_normal(k1.shape) + 1j * rng.standard_normal(k1.shape)) * amplitude
        channels.append(np.fft.ifft2(modes).real)
    values = np.stack(channels, axis=-1)
    return values / np.max(np.linalg.norm(values, axis=-1))


def _random_rotation(rng: np.random.Generator) -> Tuple[List[float], float]:
    axis = rng.standard_normal(3)
    return [float(a) for a in axis / np.linalg.norm(axis)], float(rng.uniform(0.0, np.pi))


def _within_cap(build: Callable[[float], SphereField], amplitude: float) -> Tuple[SphereField, float]:
    """Halve the amplitude until the built field is safely below ENERGY_CAP."""
    u = build(amplitude)
    while dirichlet_energy(u) > CAP_MARGIN * ENERGY_CAP:
        amplitude *= 0.5
        u = build(amplitude)
    return u, amplitude


def compact_profile(r: np.ndarray, amplitude: float, support: float) -> np.ndarray:
    """amplitude * sin^2(pi r / support) on [0, support], zero outside (degree 0)."""
    inside = r < support
    return np.where(inside, amplitude * np.sin(np.pi * np.minimum(r, support) / support) ** 2, 0.0)


def generate_corpus(seed: int = settings.CORPUS_SEED, grid: Optional[Grid] = None) -> Corpus:
    """
    Build the deterministic test corpus.

    Args:
        seed: Seed of the generator driving rotations, perturbations and random fields
        grid: Node grid (defaults to the configured L and N)

    Returns:
        Corpus of at least 30 maps with provenance tags
    """
    grid = grid or Grid(settings.DEFAULT_HALF_WIDTH, settings.DEFAULT_NODES)
    rng = np.random.default_rng(seed)
    corpus = Corpus(seed=seed, grid=grid)
    L = grid.half_width
    radius = grid.radius()

    def add(kind: str, params: Dict[str, Any], tag: str, u: SphereField):
        u.metadata = dict(u.metadata, corpus_tag=tag, corpus_seed=seed)
        corpus.members.append(CorpusMember(MapSpec(kind, params, tag), u))

    add("constant", {"value": NORTH_POLE.tolist()}, "constant/north", SphereField.constant(grid))

    # Centered bubbles of degree 1 and 2 under random target rotations
    for degree, scale in ((1, 0.1), (1, 0.2), (1, 0.4), (1, 0.8), (2, 0.2), (2, 0.4)):
        axis, angle = _random_rotation(rng)
        u = make_bubble(grid, degree, scale, (0.0, 0.0), rotation_matrix(axis, angle))
        params = {"degree": degree, "lambda": scale, "center": [0.0, 0.0], "axis": axis, "angle": angle}
        add("bubble", params, f"bubble/deg{degree}/lam{scale:g}", u)

    # Off-center bubbles: x _| du is large, so |T_hat|_1^2 exceeds eps0
    for center in ((1.5, 0.0), (0.0, -2.0), (2.0, 1.0), (-1.8, 1.2), (2.5, -0.5)):
        u = make_bubble(grid, 1, 0.3, center)
        params = {"degree": 1, "lambda": 0.3, "center": list(center)}
        add("off_center", params, f"off_center/x{center[0]:g}_y{center[1]:g}", u)

    add(
        "bubble_pair",
        {"separation": 3.0, "lambda": 0.2},
        "bubble_pair/sep3",
        make_bubble_pair(grid, 3.0, 0.2),
    )

    # Perturbed bubbles: tangent band-limited perturbation inside 0.4L
    base = make_bubble(grid, 1, 0.3)
    window = smooth_cutoff(radius, 0.25 * L, 0.4 * L)[..., None]
    for i, (amplitude, length) in enumerate(((0.05, 1.0), (0.1, 0.5), (0.2, 1.0), (0.3, 2.0), (0.4, 1.0), (0.6, 2.0))):
        direction = tangent_part(base, band_limited_field(grid, rng, length) * window)
        u, used = _within_cap(lambda a: perturb(base, direction, a), amplitude)
        params = {"degree": 1, "lambda": 0.3, "amplitude": used, "mode": length}
        add("perturbed_bubble", params, f"perturbed_bubble/{i}", u)

    # Equivariant lifts
    r = radial_grid(L, 1e-3, 1.05)
    add(
        "equivariant",
        {"m": 1, "profile": "bubble", "lambda": 0.2},
        "equivariant/m1/bubble",
        lift(RadialProfile(r, bubble_profile(r, 0.2), 1), grid),
    )
    for m, amplitude, support in ((1, 0.5 * np.pi, 3.0), (2, 0.25 * np.pi, 3.0), (1, 0.9 * np.pi, 2.0)):
        u, used = _within_cap(lambda a: lift(RadialProfile(r, compact_profile(r, a, support), m), grid), amplitude)
        params = {"m": m, "profile": "compact", "amplitude": float(used), "support": support}
        add("equivariant", params, f"equivariant/m{m}/a{used:.3g}_s{support:g}", u)

    # Degree-0 band-limited random fields around the north pole
    outer = smooth_cutoff(radius, 0.5 * L, 0.75 * L)[..., None]
    for i, (amplitude, length) in enumerate(
        ((0.3, 0.5), (0.5, 0.5), (0.9, 0.5), (0.3, 1.0), (0.6, 1.0), (0.9, 1.0), (0.5, 2.0), (0.9, 2.0), (0.7, 3.0))
    ):
        g = band_limited_field(grid, rng, length) * outer
        u, used = _within_cap(lambda a: SphereField.from_values(grid, normalize(NORTH_POLE + a * g)), amplitude)
        params = {"amplitude": used, "length_scale": length}
        add("random", params, f"random/{i}", u)

    logger.info(f"✓ Corpus seed={seed}: {len(corpus)} maps on N={grid.nodes}")
    return corpus


def write_corpus(corpus: Corpus, out_dir: Union[str, Path]) -> Path:
    """Write every member as <index>.sfld plus a manifest of tags and digests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = corpus.manifest()
    for i, (member, entry) in enumerate(zip(corpus, manifest["members"])):
        name = f"{i:03d}.sfld"
        write_sfld(member.field, out_dir / name)
        entry["file"] = name
    with open(out_dir / MANIFEST_NAME, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
    return out_dir


def load_corpus(path: Union[str, Path]) -> Corpus:
    """Read a corpus directory written by write_corpus."""
    path = Path(path)
    with open(path / MANIFEST_NAME, "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    grid = Grid(manifest["grid"]["L"], manifest["grid"]["N"])
    corpus = Corpus(seed=manifest["seed"], grid=grid)
    for entry in manifest["members"]:
        spec = MapSpec(entry["kind"], entry["params"], entry["tag"])
        corpus.members.append(CorpusMember(spec, read_sfld(path / entry["file"])))
    return corpus
