"""
Time integration of harmonic map flow u_t = T(u).

Two modes share one run loop:
- "2d": projected forward Euler on a SphereField (dt = dt_safety * h^2),
  stopped when max |du| exceeds 2/h.
- "equivariant": semi-implicit steps of the radial profile equation on a
  graded grid (dt = dt_safety * min spacing^2), stopped when
  |du| * local spacing exceeds 2.

Every record is computed with tau = T1 - t. The run keeps the state at each
record so diagnostics can be rebuilt later for a different T1.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from config import settings
from src.diagnostics.gaussian_diagnostics import DiagnosticRecord, record_diagnostics, state_terms
from src.errors import ConfigError, FlowAbortError
from src.fields.field_core import dirichlet_energy, energy_density, tension
from src.fields.kernels import select_radial_kernel, tridiagonal_coefficients
from src.fields.radial_profile import RadialProfile
from src.fields.sphere_field import Grid, SphereField

logger = logging.getLogger(__name__)

State = Union[SphereField, RadialProfile]

STABILITY_LIMIT = 0.25
ENERGY_GROWTH_LIMIT = 0.01
RESOLUTION_LIMIT = 2.0
# An extra record is taken whenever max |du| * spacing grows by this factor
RECORD_GROWTH = 1.1
# A final step shorter than this fraction of dt is dropped and t snaps to t_end
TAIL_FLOOR = 1e-9


@dataclass
class FlowConfig:
    """
    Parameters of a single flow run.

    Args:
        grid: 2-D grid (its half width also bounds the radial grid)
        t_end: Final time
        T1: Presumptive singular time for weighted diagnostics (T1 > t_end)
        R: Outer parabolic radius, 0 < R <= sqrt(T1)
        E0: Critical level subtracted in phi
        dt_safety: dt = dt_safety * h^2, in (0, 0.25]
        snapshot_times: Times at which states are kept as snapshots
        diagnostic_stride: Steps between records
        s_spacing: Log-time advance that forces an extra record
        near_stop_strides: Records flagged near_stop before a resolvability stop
        radial_first_spacing: First radial spacing as a fraction of L
        radial_ratio: Geometric growth of radial spacings
        m: Corotation index of equivariant runs
        use_numba: Use the JIT radial kernel when available
    """

    grid: Grid
    t_end: float
    T1: float
    R: float
    E0: float = 0.0
    dt_safety: float = 0.2
    snapshot_times: List[float] = field(default_factory=list)
    diagnostic_stride: int = 10
    s_spacing: float = 0.05
    near_stop_strides: int = 10
    radial_first_spacing: float = 1e-4
    radial_ratio: float = 1.02
    m: int = 1
    use_numba: bool = settings.USE_NUMBA

    def __post_init__(self):
        problems = []
        if not 0 < self.dt_safety <= STABILITY_LIMIT:
            problems.append(f"flow.dt_safety must lie in (0, {STABILITY_LIMIT}] (got {self.dt_safety})")
        if not self.t_end > 0:
            problems.append(f"flow.t_end must be positive (got {self.t_end})")
        if not self.T1 > self.t_end:
            problems.append(
                f"diag.T1 = {self.T1} must exceed flow.t_end = {self.t_end} so that tau = T1 - t stays positive"
            )
        if not 0 < self.R <= math.sqrt(max(self.T1, 0.0)):
            problems.append(f"diag.R must satisfy 0 < R <= sqrt(T1) (got R={self.R}, T1={self.T1})")
        if self.diagnostic_stride < 1:
            problems.append(f"flow.diagnostic_stride must be at least 1 (got {self.diagnostic_stride})")
        if not self.s_spacing > 0:
            problems.append(f"flow.s_spacing must be positive (got {self.s_spacing})")
        if self.near_stop_strides < 0:
            problems.append(f"flow.near_stop_strides must be non-negative (got {self.near_stop_strides})")
        if not self.radial_first_spacing > 0 or not self.radial_ratio >= 1.0:
            problems.append("radial.first_spacing must be positive and radial.ratio at least 1")
        if int(self.m) != self.m or self.m < 1:
            problems.append(f"radial.m must be a positive integer (got {self.m})")
        if problems:
            raise ConfigError("Invalid flow configuration:\n   " + "\n   ".join(problems))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["grid"] = {"L": self.grid.half_width, "N": self.grid.nodes}
        return data


@dataclass
class FlowRun:
    """
    Result of a flow run.

    Args:
        config: Configuration the run used
        mode: "2d" or "equivariant"
        records: Diagnostic records in time order
        states: State at each record (aligned with records)
        snapshots: States at the requested snapshot times
        dt: Time step
        stop_reason: "t_end" or "resolvability"
        t_stop: Time of the last state
        batch_duration: Duration of the final batch of steps
        init: Initial-data description echoed from the config
    """

    config: FlowConfig
    mode: str
    records: List[DiagnosticRecord] = field(default_factory=list)
    states: List[State] = field(default_factory=list)
    snapshots: Dict[float, State] = field(default_factory=dict)
    dt: float = 0.0
    stop_reason: str = "t_end"
    t_stop: float = 0.0
    batch_duration: float = 0.0
    init: Dict = field(default_factory=dict)

    @property
    def concentrated(self) -> bool:
        return self.stop_reason == "resolvability"

    @property
    def final_state(self) -> State:
        return self.states[-1]

    def usable_records(self) -> List[DiagnosticRecord]:
        return [rec for rec in self.records if not rec.near_stop]

    def usable_indices(self) -> List[int]:
        return [i for i, rec in enumerate(self.records) if not rec.near_stop]

    def series(self, name: str, usable: bool = True) -> np.ndarray:
        records = self.usable_records() if usable else self.records
        return np.array([getattr(rec, name) for rec in records], dtype=float)

    def state_index_at(self, t: float) -> int:
        """Index of the earliest stored state with time >= t (last one if none)."""
        for i, rec in enumerate(self.records):
            if rec.t >= t:
                return i
        return len(self.records) - 1

    def state_at(self, t: float) -> Tuple[float, State]:
        i = self.state_index_at(t)
        return self.records[i].t, self.states[i]

    @property
    def resolution(self) -> float:
        """Grid spacing of a 2-D run; largest radial spacing inside sqrt(T1) otherwise."""
        if self.mode == "2d":
            return self.config.grid.spacing
        p = self.states[0]
        inside = p.r_nodes <= max(4.0 * math.sqrt(self.config.T1), p.r_nodes[1])
        return float(np.max(p.local_spacing[inside]))


def step_2d(u: SphereField, dt: float) -> SphereField:
    """
    One projected forward-Euler step: u + dt T(u), renormalized per node.

    Args:
        u: Current field
        dt: Time step, at most 0.25 h^2

    Returns:
        Next field (boundary rings frozen)
    """
    limit = STABILITY_LIMIT * u.grid.spacing ** 2
    if dt > limit * (1.0 + 1e-12):
        raise ValueError(f"dt = {dt:g} exceeds the explicit stability bound {limit:g}")

    predicted = u.values + dt * tension(u).values
    norms = np.linalg.norm(predicted, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0.0):
        bad = int(np.count_nonzero(~np.isfinite(norms) | (norms == 0.0)))
        raise FlowAbortError(
            "Renormalization of a zero or non-finite vector",
            dump={"dt": dt, "bad_nodes": bad, "energy": dirichlet_energy(u)},
        )
    values = predicted / norms
    values[u.grid.ring_mask()] = u.boundary_value
    return u.with_values(values)


def _advance_profile(p: RadialProfile, dt: float, n_steps: int, du_limit: float, kernel) -> Tuple[RadialProfile, int]:
    sub, diag, sup = tridiagonal_coefficients(p.r_nodes, p.cell_widths, p.m, dt)
    h = p.h_values.copy()
    done = kernel(h, p.r_nodes, sub, diag, sup, p.local_spacing, p.m * p.m, dt, n_steps, du_limit)
    if done < 0:
        raise FlowAbortError(
            "Tridiagonal solve failed or produced non-finite values",
            dump={"dt": dt, "n_steps": n_steps, "energy": p.energy()},
        )
    return p.with_values(h), int(done)


def step_equivariant(p: RadialProfile, dt: float, use_numba: bool = False) -> RadialProfile:
    """
    One semi-implicit step of the profile equation.

    Linear terms are implicit (tridiagonal solve), the sine remainder explicit;
    h(0) = 0 and h(r_max) stay fixed.
    """
    limit = STABILITY_LIMIT * p.min_spacing ** 2
    if dt > limit * (1.0 + 1e-12):
        raise ValueError(f"dt = {dt:g} exceeds the radial step bound {limit:g}")
    stepped, _ = _advance_profile(p, dt, 1, math.inf, select_radial_kernel(use_numba))
    return stepped


def resolution_ratio(p: RadialProfile) -> float:
    """max over nodes of |du| * local spacing."""
    return float(np.max(np.sqrt(p.energy_density()) * p.local_spacing))


def lift(p: RadialProfile, grid: Grid) -> SphereField:
    """
    Evaluate the equivariant ansatz on a 2-D grid (cubic interpolation of h).

    The outer rings take the pole nearest to h(r_max).
    """
    x1, x2 = grid.coordinates()
    r = np.hypot(x1, x2)
    theta = np.arctan2(x2, x1)
    h = p(r)
    values = np.stack(
        [np.cos(p.m * theta) * np.sin(h), np.sin(p.m * theta) * np.sin(h), np.cos(h)],
        axis=-1,
    )
    return SphereField.from_values(grid, values, p.boundary_value, {"kind": "lift", "m": int(p.m)})


def project_to_profile(u: SphereField, template: RadialProfile) -> RadialProfile:
    """
    Read an equivariant field back into a profile on the template's nodes.

    Samples u along the ray theta = 0, where u = (sin h, 0, cos h).
    """
    r = np.minimum(template.r_nodes, u.grid.half_width)
    samples = u.sample(np.stack([r, np.zeros_like(r)], axis=-1))
    h = np.unwrap(np.arctan2(samples[:, 0], samples[:, 2]))
    return template.with_values(h - h[0])


class _Recorder:
    """Collects records and states for one run (single writer, time order)."""

    def __init__(self, config: FlowConfig, run: FlowRun, on_record: Optional[Callable] = None):
        self.config = config
        self.run = run
        self.on_record = on_record
        self.pending_snapshots = sorted(float(t) for t in config.snapshot_times)

    def emit(self, state: State, t: float) -> DiagnosticRecord:
        c = self.config
        record = record_diagnostics(state, t, c.T1, c.R, c.E0, terms=state_terms(state))
        self.run.records.append(record)
        self.run.states.append(state)
        while self.pending_snapshots and t >= self.pending_snapshots[0] - 1e-12:
            self.run.snapshots[self.pending_snapshots.pop(0)] = state
        if self.on_record is not None:
            self.on_record(record)
        return record


def _check_energy(previous: float, current: float, step: int, t: float, config: FlowConfig):
    if current > previous * (1.0 + ENERGY_GROWTH_LIMIT) + 1e-12:
        raise FlowAbortError(
            f"Energy increased from {previous:.6g} to {current:.6g} between strides",
            dump={"step": step, "t": t, "previous_energy": previous, "energy": current, "config": config.to_dict()},
        )


def _flag_near_stop(run: FlowRun):
    count = run.config.near_stop_strides
    for record in run.records[len(run.records) - count:] if count else []:
        record.near_stop = True


def _run_2d(config: FlowConfig, u: SphereField, run: FlowRun, recorder: _Recorder) -> FlowRun:
    h = u.grid.spacing
    dt = config.dt_safety * h * h
    du_limit = RESOLUTION_LIMIT / h
    run.dt = dt

    t, steps = 0.0, 0
    previous = dirichlet_energy(u)
    recorder.emit(u, t)
    logger.info(f"ℹ️  2-D run: N={u.grid.nodes}, dt={dt:.3e}, t_end={config.t_end}")

    while t < config.t_end:
        batch_start = t
        for _ in range(config.diagnostic_stride):
            step_dt = min(dt, config.t_end - t)
            u = step_2d(u, step_dt)
            steps += 1
            t = config.t_end if step_dt < dt else steps * dt
            if recorder.pending_snapshots and t >= recorder.pending_snapshots[0]:
                run.snapshots[recorder.pending_snapshots.pop(0)] = u
            if t >= config.t_end:
                break
        run.batch_duration = t - batch_start

        current = dirichlet_energy(u)
        _check_energy(previous, current, steps, t, config)
        previous = current
        recorder.emit(u, t)

        if float(np.sqrt(np.max(energy_density(u)))) > du_limit:
            run.stop_reason = "resolvability"
            logger.warning(f"⚠️  Resolvability stop at t={t:.6g}: max|du| exceeds 2/h")
            break

    run.t_stop = t
    return run


def _run_equivariant(config: FlowConfig, p: RadialProfile, run: FlowRun, recorder: _Recorder) -> FlowRun:
    kernel = select_radial_kernel(config.use_numba)
    dt = config.dt_safety * p.min_spacing ** 2
    run.dt = dt
    logger.info(
        f"ℹ️  Equivariant run: {len(p.r_nodes)} radial nodes, dt={dt:.3e}, "
        f"t_end={config.t_end}, kernel={'numba' if kernel.__name__.endswith('numba') else 'numpy'}"
    )

    t, steps = 0.0, 0
    previous = p.energy()
    last = recorder.emit(p, t)
    trigger = min(RESOLUTION_LIMIT, resolution_ratio(p) * RECORD_GROWTH)

    while t < config.t_end:
        batch_start = t
        s_target = last.s + config.s_spacing
        t_target = config.T1 - config.R ** 2 * math.exp(-2.0 * s_target)
        remaining = config.t_end - t
        n_steps = min(config.diagnostic_stride, max(1, math.ceil((t_target - t) / dt)))
        final = n_steps * dt >= remaining
        if final:
            # whole steps up to t_end, then one shortened step lands on it
            n_steps = int(remaining / dt)
        done = 0
        if n_steps:
            p, done = _advance_profile(p, dt, n_steps, trigger, kernel)
        steps += done
        t = batch_start + done * dt
        if final and done == n_steps:
            tail = config.t_end - t
            if tail > TAIL_FLOOR * dt:
                p, extra = _advance_profile(p, tail, 1, trigger, kernel)
                steps += extra
            t = config.t_end
        run.batch_duration = t - batch_start

        current = p.energy()
        _check_energy(previous, current, steps, t, config)
        previous = current
        last = recorder.emit(p, t)

        ratio = resolution_ratio(p)
        if ratio > RESOLUTION_LIMIT:
            run.stop_reason = "resolvability"
            logger.warning(f"⚠️  Resolvability stop at t={t:.6g}: |du| spacing ratio {ratio:.3g}")
            break
        trigger = min(RESOLUTION_LIMIT, max(trigger, ratio * RECORD_GROWTH))

    run.t_stop = t
    return run


def run(
    config: FlowConfig,
    initial: State,
    init: Optional[Dict] = None,
    on_record: Optional[Callable[[DiagnosticRecord], None]] = None,
) -> FlowRun:
    """
    Integrate the flow from initial data and stream diagnostics.

    Args:
        config: Run parameters
        initial: SphereField (2-D mode) or RadialProfile (equivariant mode)
        init: Initial-data description kept with the run
        on_record: Called with every record as soon as it is computed

    Returns:
        FlowRun with records, aligned states and snapshots
    """
    if isinstance(initial, RadialProfile):
        mode = "equivariant"
    else:
        mode = "2d"
        if initial.grid != config.grid:
            raise ConfigError(f"Initial field grid {initial.grid} does not match config grid {config.grid}")
        problems = initial.invariant_violations()
        if problems:
            raise ValueError(f"Initial field violates SphereField invariants: {problems}")

    flow_run = FlowRun(config=config, mode=mode, init=dict(init or {}))
    recorder = _Recorder(config, flow_run, on_record)
    if mode == "2d":
        _run_2d(config, initial, flow_run, recorder)
    else:
        _run_equivariant(config, initial, flow_run, recorder)

    if flow_run.concentrated:
        _flag_near_stop(flow_run)
    logger.info(
        f"✓ Run finished: {len(flow_run.records)} records, stop={flow_run.stop_reason}, t={flow_run.t_stop:.6g}"
    )
    return flow_run


def recompute_diagnostics(flow_run: FlowRun, T1: float, R: float, E0: float) -> FlowRun:
    """
    Rebuild the record stream for a new (T1, R, E0) from the stored states.

    States at or after T1 are dropped; near_stop flags are kept.
    """
    config = replace(flow_run.config, T1=T1, R=R, E0=E0, t_end=min(flow_run.config.t_end, T1 * (1 - 1e-12)))
    rebuilt = replace(flow_run, config=config, records=[], states=[])
    for record, state in zip(flow_run.records, flow_run.states):
        if record.t >= T1:
            continue
        new = record_diagnostics(state, record.t, T1, R, E0, terms=state_terms(state))
        new.near_stop = record.near_stop
        rebuilt.records.append(new)
        rebuilt.states.append(state)
    return rebuilt


def singular_time_estimate(flow_run: FlowRun) -> float:
    """Stop time plus the duration of the final batch (first-pass T1 selection)."""
    return flow_run.t_stop + max(flow_run.batch_duration, flow_run.dt)
