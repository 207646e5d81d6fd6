"""Shared fixtures for the test suite."""
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.diagnostics.gaussian_diagnostics import DiagnosticRecord
from src.fields.field_core import make_bubble, perturb, smooth_cutoff, tangent_part
from src.fields.radial_profile import RadialProfile, bubble_profile, radial_grid
from src.fields.sphere_field import Grid, SphereField
from src.flow.flow_engine import FlowConfig, FlowRun


@pytest.fixture
def small_grid():
    return Grid(8.0, 64)


@pytest.fixture
def bubble_grid():
    return Grid(8.0, 128)


@pytest.fixture
def wide_bubble(bubble_grid):
    """Degree-1 bubble resolved by about 8 nodes per scale."""
    return make_bubble(bubble_grid, 1, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def rough_field(small_grid, rng):
    """A smooth map far from harmonic: a wide bubble under a windowed tangent perturbation."""
    base = make_bubble(small_grid, 1, 1.0)
    window = smooth_cutoff(small_grid.radius(), 2.0, 3.5)[..., None]
    x1, x2 = small_grid.coordinates()
    vectors = np.stack([np.sin(x1), np.cos(0.7 * x2), 0.3 * x1 * x2], axis=-1) * window
    return perturb(base, tangent_part(base, vectors), 0.4)


@pytest.fixture
def bubble_profile_state():
    r = radial_grid(8.0, 1e-4, 1.02)
    return RadialProfile(r, bubble_profile(r, 0.05), 1)


@pytest.fixture
def constant_field(small_grid):
    return SphereField.constant(small_grid)


def _record(t, Phi=1.0, phi=None, T1=1.0, R=1.0, norm_That=0.5, psi=0.1, delta=0.2, **extra):
    tau = T1 - t
    return DiagnosticRecord(
        t=t,
        tau=tau,
        Phi=Phi,
        Psi=0.5,
        norm_That=norm_That,
        norm_T=0.1,
        norm_rdu=0.3,
        phi=Phi if phi is None else phi,
        psi=psi,
        delta=delta,
        eta=0.5,
        s=math.log(R / math.sqrt(tau)),
        **extra,
    )


def _run(records, T1=1.0, R=1.0):
    config = FlowConfig(grid=Grid(8.0, 32), t_end=0.9 * T1, T1=T1, R=R)
    return FlowRun(config=config, mode="2d", records=records, states=[None] * len(records), dt=1e-3)


@pytest.fixture
def make_record():
    """Builds a DiagnosticRecord at time t with tau = T1 - t and s = log(R / sqrt(tau))."""
    return _record


@pytest.fixture
def make_run():
    """Wraps synthetic records into a 2-D FlowRun without states."""
    return _run
