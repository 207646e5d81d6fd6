"""
Field snapshot files.

`.sfld` layout: a short text header, one item per line,

    SFLD 1
    L <half width>
    N <nodes per side>
    boundary <x> <y> <z>
    meta <key> <json value>      (zero or more)
    END

followed by the node values as row-major little-endian float64, 3 per node.
Floats in the header are written with repr(), so a write/read cycle is exact.

Radial profiles are stored as `.npz` archives (r_nodes, h_values, m, metadata).
"""
import json
import logging
from pathlib import Path
from typing import Union

import numpy as np

from src.fields.radial_profile import RadialProfile
from src.fields.sphere_field import Grid, SphereField

logger = logging.getLogger(__name__)

MAGIC = "SFLD 1"


def write_sfld(u: SphereField, path: Union[str, Path]) -> Path:
    """
    Write a SphereField snapshot.

    Args:
        u: Field to store
        path: Destination (.sfld)

    Returns:
        The written path
    """
    path = Path(path)
    header = [
        MAGIC,
        f"L {u.grid.half_width!r}",
        f"N {u.grid.nodes}",
        "boundary " + " ".join(repr(float(c)) for c in u.boundary_value),
    ]
    for key, value in u.metadata.items():
        if " " in key or "\n" in key:
            raise ValueError(f"Metadata key {key!r} cannot contain whitespace")
        header.append(f"meta {key} {json.dumps(value)}")
    header.append("END")

    with open(path, "wb") as handle:
        handle.write(("\n".join(header) + "\n").encode("utf-8"))
        handle.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())
    logger.debug(f"✓ Wrote snapshot {path.name}")
    return path


def read_sfld(path: Union[str, Path]) -> SphereField:
    """Read a `.sfld` snapshot written by write_sfld."""
    path = Path(path)
    with open(path, "rb") as handle:
        first = handle.readline().decode("utf-8").strip()
        if first != MAGIC:
            raise ValueError(f"{path.name} is not a field snapshot (header {first!r})")

        half_width, nodes, boundary, metadata = None, None, None, {}
        while True:
            line = handle.readline()
            if not line:
                raise ValueError(f"{path.name}: header has no END line")
            text = line.decode("utf-8").rstrip("\n")
            if text == "END":
                break
            tag, _, rest = text.partition(" ")
            if tag == "L":
                half_width = float(rest)
            elif tag == "N":
                nodes = int(rest)
            elif tag == "boundary":
                boundary = np.array([float(c) for c in rest.split()])
            elif tag == "meta":
                key, _, value = rest.partition(" ")
                metadata[key] = json.loads(value)
            else:
                raise ValueError(f"{path.name}: unknown header line {text!r}")
        payload = handle.read()

    if half_width is None or nodes is None or boundary is None:
        raise ValueError(f"{path.name}: header is missing L, N or boundary")
    grid = Grid(half_width, nodes)
    expected = nodes * nodes * 3 * 8
    if len(payload) != expected:
        raise ValueError(f"{path.name}: expected {expected} data bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").reshape(nodes, nodes, 3).astype(np.float64)
    return SphereField(grid, values, boundary, metadata)


def write_profile(p: RadialProfile, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "wb") as handle:
        np.savez(
            handle,
            r_nodes=p.r_nodes,
            h_values=p.h_values,
            m=np.array(p.m),
            metadata=np.array(json.dumps(p.metadata)),
        )
    return path


def read_profile(path: Union[str, Path]) -> RadialProfile:
    with np.load(Path(path), allow_pickle=False) as archive:
        return RadialProfile(
            archive["r_nodes"],
            archive["h_values"],
            int(archive["m"]),
            json.loads(str(archive["metadata"])),
        )


def write_state(state: Union[SphereField, RadialProfile], path: Union[str, Path]) -> Path:
    """Write either kind of state; the suffix is chosen from the type."""
    path = Path(path)
    suffix = ".npz" if isinstance(state, RadialProfile) else ".sfld"
    if path.suffix != suffix:
        path = path.parent / (path.name + suffix)
    if isinstance(state, RadialProfile):
        return write_profile(state, path)
    return write_sfld(state, path)


def read_state(path: Union[str, Path]) -> Union[SphereField, RadialProfile]:
    path = Path(path)
    if path.suffix == ".npz":
        return read_profile(path)
    return read_sfld(path)
