"""
Experiment configuration files.

Configs are YAML, nested by section. Every key has a default below; unknown
sections or keys are rejected. The fully-defaulted config is what gets echoed
next to a run, and parsing the echo reproduces the same FlowConfig and InitSpec.

    grid:   L, N
    flow:   dt_safety, t_end, snapshot_times, diagnostic_stride, s_spacing, near_stop_strides
    diag:   T1, R, E0
    init:   kind (bubble | bubble_pair | equivariant | file | constant) and its parameters
    radial: first_spacing, ratio, m
"""
import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from config import settings
from src.errors import ConfigError
from src.fields.field_core import make_bubble, make_bubble_pair, rotation_matrix
from src.fields.radial_profile import RadialProfile, bubble_profile, overshoot_profile, radial_grid
from src.fields.snapshot_io import read_state
from src.fields.sphere_field import Grid, SphereField
from src.flow.flow_engine import FlowConfig, State

logger = logging.getLogger(__name__)

# Keys accepted under a second name; the canonical key is what gets echoed
ALIASES = {"flow.T1": "diag.T1"}

INIT_KINDS = ("bubble", "bubble_pair", "equivariant", "file", "constant")
PROFILE_KINDS = ("overshoot", "bubble")

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "grid": {"L": settings.DEFAULT_HALF_WIDTH, "N": settings.DEFAULT_NODES},
    "flow": {
        "dt_safety": settings.DT_SAFETY,
        "t_end": 1.0,
        "snapshot_times": [],
        "diagnostic_stride": 10,
        "s_spacing": 0.05,
        "near_stop_strides": 10,
    },
    "diag": {"T1": 2.0, "R": 1.0, "E0": 0.0},
    "init": {
        "kind": "bubble",
        "degree": 1,
        "lambda": 0.1,
        "center": [0.0, 0.0],
        "rotation_axis": [1.0, 0.0, 0.0],
        "rotation_angle": 0.0,
        "separation": 4.0,
        "profile": "overshoot",
        "lambda0": 0.5,
        "overshoot": 0.5,
        "path": "",
        "value": [0.0, 0.0, 1.0],
    },
    "radial": {"first_spacing": 1e-4, "ratio": 1.02, "m": 1},
}


@dataclass
class InitSpec:
    """
    Initial-data description.

    Args:
        kind: One of INIT_KINDS
        params: Every init.* key (defaulted)
    """

    kind: str
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def mode(self) -> str:
        """Flow mode implied by the initial data."""
        if self.kind == "equivariant":
            return "equivariant"
        if self.kind == "file" and str(self.params.get("path", "")).endswith(".npz"):
            return "equivariant"
        return "2d"

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.params, kind=self.kind)


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    name = f"{section}.{key}"
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            number = float(value)
            if number != int(number):
                raise ConfigError(f"{name} must be an integer (got {value!r})")
            return int(number)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{name} must be a list (got {value!r})")
            return [float(v) for v in value]
        return str(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name} has an invalid value {value!r}: {e}") from e


def _assign(merged: Dict[str, Dict[str, Any]], dotted: str, value: Any, unknown: list):
    dotted = ALIASES.get(dotted, dotted)
    section, _, key = dotted.partition(".")
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        unknown.append(dotted)
        return
    merged[section][key] = _coerce(section, key, value, DEFAULTS[section][key])


def merge_config(data: Optional[Mapping[str, Any]], overrides: Optional[Mapping[str, Any]] = None) -> Dict[str, Dict[str, Any]]:
    """
    Merge user values into DEFAULTS, rejecting unknown sections and keys.

    Args:
        data: Nested mapping as loaded from YAML (None for all defaults)
        overrides: Dotted keys ("grid.N") applied after the file

    Returns:
        Fully-defaulted nested dict
    """
    merged = copy.deepcopy(DEFAULTS)
    unknown = []
    for section, values in (data or {}).items():
        if section not in DEFAULTS:
            unknown.append(str(section))
            continue
        if not isinstance(values, Mapping):
            raise ConfigError(f"Section '{section}' must be a mapping of keys to values")
        for key, value in values.items():
            _assign(merged, f"{section}.{key}", value, unknown)
    for dotted, value in (overrides or {}).items():
        _assign(merged, dotted, value, unknown)

    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {', '.join(sorted(unknown))}")
    if merged["init"]["kind"] not in INIT_KINDS:
        raise ConfigError(f"init.kind must be one of {', '.join(INIT_KINDS)} (got {merged['init']['kind']!r})")
    if merged["init"]["profile"] not in PROFILE_KINDS:
        raise ConfigError(f"init.profile must be one of {', '.join(PROFILE_KINDS)}")
    return merged


def build_config(merged: Mapping[str, Mapping[str, Any]]) -> Tuple[FlowConfig, InitSpec]:
    """FlowConfig and InitSpec from a fully-defaulted config dict."""
    g, f, d, r = merged["grid"], merged["flow"], merged["diag"], merged["radial"]
    if g["N"] < 16:
        raise ConfigError(f"grid.N must be at least 16 (got {g['N']})")
    if not g["L"] > 0:
        raise ConfigError(f"grid.L must be positive (got {g['L']})")
    config = FlowConfig(
        grid=Grid(g["L"], g["N"]),
        t_end=f["t_end"],
        T1=d["T1"],
        R=d["R"],
        E0=d["E0"],
        dt_safety=f["dt_safety"],
        snapshot_times=list(f["snapshot_times"]),
        diagnostic_stride=f["diagnostic_stride"],
        s_spacing=f["s_spacing"],
        near_stop_strides=f["near_stop_strides"],
        radial_first_spacing=r["first_spacing"],
        radial_ratio=r["ratio"],
        m=r["m"],
    )
    init = dict(merged["init"])
    return config, InitSpec(init.pop("kind"), init)


def load_config(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"{path.name} must contain a mapping of sections")
    return data or {}


def parse_config(
    path: Union[str, Path],
    overrides: Optional[Mapping[str, Any]] = None,
) -> Tuple[FlowConfig, InitSpec]:
    """
    Read, default and validate an experiment config.

    Args:
        path: YAML file
        overrides: Dotted keys applied on top (CLI flags, sweep values)

    Returns:
        (FlowConfig, InitSpec)
    """
    return build_config(merge_config(load_config(path), overrides))


def echo(config: FlowConfig, init: InitSpec) -> str:
    """Fully-defaulted YAML text; parse_config of it reproduces (config, init)."""
    data = {
        "grid": {"L": config.grid.half_width, "N": config.grid.nodes},
        "flow": {
            "dt_safety": config.dt_safety,
            "t_end": config.t_end,
            "snapshot_times": list(config.snapshot_times),
            "diagnostic_stride": config.diagnostic_stride,
            "s_spacing": config.s_spacing,
            "near_stop_strides": config.near_stop_strides,
        },
        "diag": {"T1": config.T1, "R": config.R, "E0": config.E0},
        "init": init.to_dict(),
        "radial": {"first_spacing": config.radial_first_spacing, "ratio": config.radial_ratio, "m": config.m},
    }
    return yaml.safe_dump(data, sort_keys=True)


def _rotation(params: Mapping[str, Any]) -> Optional[np.ndarray]:
    if params["rotation_angle"] == 0.0:
        return None
    return rotation_matrix(params["rotation_axis"], params["rotation_angle"])


def build_initial(config: FlowConfig, init: InitSpec) -> State:
    """
    Initial state described by an InitSpec.

    Equivariant data live on radial_grid(L, first_spacing, ratio); the
    default profile overshoots the bubble by init.overshoot.
    """
    params = init.params
    grid = config.grid
    if init.kind == "bubble":
        return make_bubble(grid, int(params["degree"]), params["lambda"], params["center"], _rotation(params))
    if init.kind == "bubble_pair":
        return make_bubble_pair(grid, params["separation"], params["lambda"], _rotation(params))
    if init.kind == "constant":
        return SphereField.constant(grid, params["value"])
    if init.kind == "file":
        path = Path(params["path"])
        if not path.exists():
            raise ConfigError(f"init.path not found: {path}")
        return read_state(path)

    r = radial_grid(grid.half_width, config.radial_first_spacing, config.radial_ratio)
    if params["profile"] == "bubble":
        h = bubble_profile(r, params["lambda"])
    else:
        h = overshoot_profile(r, params["lambda0"], params["overshoot"])
    metadata = {"kind": "equivariant", "profile": params["profile"], "lambda0": params["lambda0"]}
    return RadialProfile(r, h, config.m, metadata)
