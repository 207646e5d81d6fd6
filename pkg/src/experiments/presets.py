"""
Named experiment presets.

Each preset exercises one statement about the flow and leaves its evidence
in an artifact directory: certificates, reports and a <name>_summary.json.
`run_preset` returns the exit status of the checks it executed.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from config import settings
from src.analysis.inequality_lab import (
    LojParams,
    fit_order,
    lambda_scale,
    loj_certificate,
    monotonicity_refinement_study,
)
from src.analysis.singularity_analysis import body_map, check_oscillation_bound
from src.experiments.config_parser import InitSpec, build_config, merge_config
from src.experiments.corpus import MANIFEST_NAME, band_limited_field, compact_profile, generate_corpus
from src.experiments.run_store import RECORDS_NAME, atomic_write_json, load_run, write_certificates, write_report
from src.experiments.workflows import (
    EXIT_ERROR,
    EXIT_OK,
    POINCARE_TAUS,
    analyze_run,
    certify_poincare,
    exit_status,
    second_pass,
    simulate,
    summarize_certificates,
    write_summary,
)
from src.fields.field_core import (
    dirichlet_energy,
    gradient_check,
    local_energy,
    make_bubble,
    perturb,
    smooth_cutoff,
    tangent_part,
)
from src.fields.radial_profile import RadialProfile, radial_grid
from src.fields.sphere_field import Grid
from src.flow.flow_engine import FlowConfig, FlowRun, lift

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * math.pi
QUANTIZATION_TOLERANCE = 0.01
GRADIENT_TOLERANCE = 1e-4
LOJ_LAMBDAS = (0.05, 0.0707, 0.1, 0.141, 0.2)
# Largest relative change of the fitted Lojasiewicz constant when N doubles
LOJ_CONSTANT_DRIFT = 0.2
# d log(lambda scale) / d log |T_hat_1| across the bubble family
LAMBDA_SLOPE_BAND = (0.8, 1.2)
IDENTITY_GAP = 0.05
ZERO_OSCILLATION = 1e-12

BLOWUP_CONFIG = {
    "grid": {"L": 8.0, "N": 128},
    "flow": {"t_end": 3.0, "diagnostic_stride": 2000, "s_spacing": 0.05, "near_stop_strides": 10},
    "diag": {"T1": 4.0, "R": 1.0, "E0": 0.0},
    "init": {"kind": "equivariant", "profile": "overshoot", "lambda0": 0.5, "overshoot": 0.5},
    "radial": {"first_spacing": 1e-4, "ratio": 1.02, "m": 1},
}
CONSTANT_CONFIG = {
    "grid": {"L": 8.0, "N": 64},
    "flow": {"t_end": 0.5, "diagnostic_stride": 20},
    "diag": {"T1": 1.0, "R": 1.0},
    "init": {"kind": "constant"},
}
SMOOTH_CONFIG = {
    "grid": {"L": 8.0, "N": 64},
    "flow": {"t_end": 0.2, "diagnostic_stride": 10},
    "diag": {"T1": 1.0, "R": 1.0},
    "init": {"kind": "equivariant"},
}


@dataclass
class PresetContext:
    """Where and how a preset runs."""

    out_dir: Path
    grid_n: Optional[int] = None
    jobs: int = 1
    seed: int = settings.CORPUS_SEED
    run_dir: Optional[Path] = None

    def nodes(self, default: int) -> int:
        return self.grid_n or default


@dataclass
class ExperimentPreset:
    """
    A reproducible experiment.

    Args:
        name: Registry key (CLI: preset <name>)
        statement: The statement the preset exercises
        runner: Does the work; returns (exit status, summary)
        verifications: Checks the runner executes
        artifacts: Paths (relative to the artifact directory) that must exist afterwards
        config: Nested flow config for presets that integrate the flow
    """

    name: str
    statement: str
    runner: Callable[["ExperimentPreset", PresetContext], Tuple[int, Dict[str, Any]]]
    verifications: Tuple[str, ...]
    artifacts: Tuple[str, ...]
    config: Optional[Dict[str, Dict[str, Any]]] = None
    default_nodes: int = settings.DEFAULT_NODES

    def flow_config(self, grid_n: Optional[int] = None, config: Optional[Dict] = None) -> Tuple[FlowConfig, InitSpec]:
        overrides = {"grid.N": grid_n} if grid_n else None
        return build_config(merge_config(config or self.config, overrides))


def _quantization(preset: ExperimentPreset, ctx: PresetContext) -> Tuple[int, Dict[str, Any]]:
    grid = Grid(8.0, ctx.nodes(preset.default_nodes))
    rows = []
    for degree in (1, 2):
        u = make_bubble(grid, degree, 0.1)
        target = FOUR_PI * degree
        energy = local_energy(u, (0.0, 0.0), 2.0 * grid.half_width).value
        error = abs(energy - target) / target
        rows.append({
            "degree": degree,
            "lambda": 0.1,
            "target": target,
            "energy": energy,
            "edge_energy": dirichlet_energy(u),
            "relative_error": error,
            "status": "pass" if error <= QUANTIZATION_TOLERANCE else "fail",
        })
        logger.info(f"✓ Degree {degree}: E={energy:.6f} (target {target:.6f}, error {error:.3%})")
    report = {
        "check": "energy-quantization",
        "nodes": grid.nodes,
        "tolerance": QUANTIZATION_TOLERANCE,
        "rows": rows,
        "status": "fail" if any(row["status"] == "fail" for row in rows) else "pass",
    }
    write_report(ctx.out_dir, "quantization", report)
    return exit_status(reports=[report]), report


def _gradient_check(preset: ExperimentPreset, ctx: PresetContext) -> Tuple[int, Dict[str, Any]]:
    grid = Grid(8.0, ctx.nodes(preset.default_nodes))
    rng = np.random.default_rng(ctx.seed)
    window = smooth_cutoff(grid.radius(), 0.25 * grid.half_width, 0.4 * grid.half_width)[..., None]

    # A perturbed wide bubble: smooth and far from harmonic
    base = make_bubble(grid, 1, 0.5)
    base = perturb(base, tangent_part(base, band_limited_field(grid, rng, 1.0) * window), 0.3)

    rows = []
    for i in range(5):
        result = gradient_check(base, band_limited_field(grid, rng, 0.5) * window)
        result["direction"] = i
        result["status"] = "pass" if result["relative_error"] < GRADIENT_TOLERANCE else "fail"
        rows.append(result)
        logger.info(f"✓ Direction {i}: relative error {result['relative_error']:.2e}")
    report = {
        "check": "gradient",
        "nodes": grid.nodes,
        "tolerance": GRADIENT_TOLERANCE,
        "rows": rows,
        "status": "fail" if any(row["status"] == "fail" for row in rows) else "pass",
    }
    write_report(ctx.out_dir, "gradient_check", report)
    return exit_status(reports=[report]), report


def _poincare_corpus(preset: ExperimentPreset, ctx: PresetContext) -> Tuple[int, Dict[str, Any]]:
    corpus = generate_corpus(ctx.seed, Grid(8.0, ctx.nodes(preset.default_nodes)))
    corpus_dir = ctx.out_dir / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    # Fields are regenerated from the seed; only the manifest is kept
    atomic_write_json(corpus_dir / MANIFEST_NAME, corpus.manifest())

    certificates = certify_poincare([(m.spec.tag, m.field) for m in corpus], POINCARE_TAUS, ctx.jobs)
    write_certificates(ctx.out_dir, certificates, "poincare")
    summary = summarize_certificates(certificates)
    summary.update(seed=ctx.seed, members=len(corpus), taus=list(POINCARE_TAUS))
    write_report(ctx.out_dir, "poincare", summary)
    return exit_status(certificates), summary


def lambda_slope_report(points: List[Tuple[float, float]], band: Tuple[float, float] = LAMBDA_SLOPE_BAND) -> Dict[str, Any]:
    """Log-log slope of lambda scale against |T_hat_1| over (norm_That, lambda_scale) points, judged against band."""
    report: Dict[str, Any] = {"band": list(band), "points": [list(p) for p in points]}
    if len(points) < 2:
        report["status"] = "under-sampled"
        return report
    slope = fit_order([p[0] for p in points], [p[1] for p in points])
    low, high = band
    report.update(slope=slope, status="pass" if low <= slope <= high else "fail")
    return report


def _loj_sweep(preset: ExperimentPreset, ctx: PresetContext) -> Tuple[int, Dict[str, Any]]:
    params = LojParams(beta=0.1)
    base = ctx.nodes(preset.default_nodes)
    certificates = []
    constants: Dict[int, float] = {}
    for nodes in (base, 2 * base):
        grid = Grid(8.0, nodes)
        ratios = []
        for scale in LOJ_LAMBDAS:
            u = make_bubble(grid, 1, scale)
            certificate = loj_certificate(u, params)
            certificate.metadata.update(
                tag=f"bubble/lam{scale:g}",
                nodes=nodes,
                bubble_lambda=scale,
                lambda_scale=lambda_scale(u, params.eps0),
            )
            certificates.append(certificate)
            if math.isfinite(certificate.ratio):
                ratios.append(certificate.ratio)
        constants[nodes] = max(ratios, default=0.0)
        logger.info(f"✓ N={nodes}: Lojasiewicz constant {constants[nodes]:.4g}")
    write_certificates(ctx.out_dir, certificates, "lojasiewicz")

    coarse, fine = constants[base], constants[2 * base]
    drift = abs(fine - coarse) / coarse if coarse > 0 else math.inf
    constant_report = {
        "constants": {str(n): c for n, c in constants.items()},
        "drift": drift,
        "tolerance": LOJ_CONSTANT_DRIFT,
        "status": "pass" if drift < LOJ_CONSTANT_DRIFT else "fail",
    }

    points = [
        (c.metadata["norm_That"], c.metadata["lambda_scale"])
        for c in certificates
        if c.metadata["nodes"] == 2 * base and 0.0 < c.metadata["lambda_scale"] < 1.0 and c.metadata["norm_That"] > 0
    ]
    slope_report = lambda_slope_report(points)

    summary = summarize_certificates(certificates)
    summary.update(beta=params.beta, lambdas=list(LOJ_LAMBDAS), constant=constant_report, lambda_slope=slope_report)
    write_report(ctx.out_dir, "loj_sweep", summary)
    return exit_status(certificates, [constant_report, slope_report]), summary


def _blowup_stage(preset: ExperimentPreset, ctx: PresetContext) -> Tuple[int, Dict[str, Any]]:
    config, init = preset.flow_config(ctx.grid_n, BLOWUP_CONFIG)
    flow_run = simulate(config, init, ctx.out_dir / "run")
    status, reports = analyze_run(flow_run, ctx.out_dir / "analysis")

    identity = reports["energy_identity"]
    bubbles = identity["bubbles"]
    gate = {
        "concentrated": flow_run.concentrated,
        "bubbles": len(bubbles),
        "degrees": [b["degree_estimate"] for b in bubbles],
        "gap": identity["gap"],
        "tolerance": IDENTITY_GAP,
    }
    single = len(bubbles) == 1 and bubbles[0]["degree_estimate"] == 1
    gate["status"] = "pass" if flow_run.concentrated and single and identity["gap"] < IDENTITY_GAP else "fail"
    write_report(ctx.out_dir, "blowup", gate)
    summary = {
        "stop_reason": flow_run.stop_reason,
        "t_stop": flow_run.t_stop,
        "records": len(flow_run.records),
        "blowup": gate,
        "statuses": {name: report.get("status") for name, report in reports.items() if isinstance(report, dict)},
    }
    return max(status, exit_status(reports=[gate])), summary


# Fewest dyadic annuli the alpha = 2 oscillation fit must see on the blowup run
MIN_OSCILLATION_ANNULI = 4
BLOWUP_RUN_DIR = settings.PRESET_DIR / "blowup-equivariant" / "run"


def _blowup_run(preset: ExperimentPreset, ctx: PresetContext) -> FlowRun:
    """An existing blowup run (ctx.run_dir, then the blowup-equivariant preset's run); simulated only if none exists."""
    if ctx.run_dir is not None:
        if not (ctx.run_dir / RECORDS_NAME).exists():
            raise FileNotFoundError(f"No run directory at {ctx.run_dir} ({RECORDS_NAME} missing)")
        return load_run(ctx.run_dir)
    for run_dir in (BLOWUP_RUN_DIR, ctx.out_dir / "run"):
        if (run_dir / RECORDS_NAME).exists():
            logger.info(f"ℹ️  Reusing blowup run {run_dir}")
            return load_run(run_dir)
    logger.info("ℹ️  No blowup run found, simulating one")
    config, init = preset.flow_config(ctx.grid_n, BLOWUP_CONFIG)
    return simulate(config, init, ctx.out_dir / "run")


def _oscillation_constant(preset: ExperimentPreset, ctx: PresetContext) -> Tuple[int, Dict[str, Any]]:
    rebuilt, params, pass_info = second_pass(_blowup_run(preset, ctx), LojParams(alpha=2.0, beta=0.1))
    fit = check_oscillation_bound(rebuilt, params)
    exponent = fit.get("fitted_exponent")
    holder = fit["annuli"] >= MIN_OSCILLATION_ANNULI and exponent is not None and exponent > 0.0
    oscillation_report = dict(
        fit,
        fit_status=fit["status"],
        minimum_annuli=MIN_OSCILLATION_ANNULI,
        status="pass" if holder else "fail",
    )
    write_report(ctx.out_dir / "analysis", "oscillation_alpha2", oscillation_report)

    config, init = preset.flow_config(ctx.grid_n, CONSTANT_CONFIG)
    constant_run = simulate(config, init, ctx.out_dir / "constant_run")
    constant_fit = check_oscillation_bound(constant_run, LojParams(alpha=2.0, beta=0.1))
    body = body_map(constant_run)
    osc = [row["osc"] for row in body.table] + list(constant_fit["profile"]["osc_values"])
    constant_report = {
        "check": "constant-map-oscillation",
        "max_osc": max(osc, default=0.0),
        "annuli": len(osc),
        "fit_status": constant_fit["status"],
        "status": "pass" if all(value <= ZERO_OSCILLATION for value in osc) else "fail",
    }
    write_report(ctx.out_dir, "constant_oscillation", constant_report)
    summary = {"second_pass": pass_info, "blowup_alpha2": oscillation_report, "constant": constant_report}
    return exit_status(reports=[oscillation_report, constant_report]), summary


def _monotonicity_refinement(preset: ExperimentPreset, ctx: PresetContext) -> Tuple[int, Dict[str, Any]]:
    config, _ = preset.flow_config(None, SMOOTH_CONFIG)
    finest = ctx.nodes(preset.default_nodes)
    nodes = (finest // 4, finest // 2, finest)
    r = radial_grid(config.grid.half_width, 1e-3, 1.05)
    profile = RadialProfile(r, compact_profile(r, 0.5 * np.pi, 3.0), 1)

    report = monotonicity_refinement_study(lambda grid: lift(profile, grid), config, nodes)
    report["initial"] = {"profile": "compact", "amplitude": 0.5 * np.pi, "support": 3.0, "m": 1}
    write_report(ctx.out_dir, "monotonicity_refinement", report)
    return exit_status(reports=[report]), report


PRESETS: Dict[str, ExperimentPreset] = {
    preset.name: preset
    for preset in (
        ExperimentPreset(
            name="quantization",
            statement="Bubbles are quantized: a degree-n bubble carries Dirichlet energy 4 pi n.",
            runner=_quantization,
            verifications=("energy-quantization",),
            artifacts=("report_quantization.json",),
            default_nodes=1024,
        ),
        ExperimentPreset(
            name="gradient-check",
            statement="The tension field is the negative gradient of the Dirichlet energy on maps into the sphere.",
            runner=_gradient_check,
            verifications=("gradient",),
            artifacts=("report_gradient_check.json",),
            default_nodes=512,
        ),
        ExperimentPreset(
            name="poincare-corpus",
            statement=(
                "Weighted Poincare inequality: ||r du||_tau <= 4 tau ||T_hat_tau||_tau and "
                "||T||_tau <= 3 ||T_hat_tau||_tau for any map and any tau > 0."
            ),
            runner=_poincare_corpus,
            verifications=("poincare-rdu", "poincare-T"),
            artifacts=("corpus/manifest.json", "poincare.jsonl", "poincare.csv", "report_poincare.json"),
            default_nodes=512,
        ),
        ExperimentPreset(
            name="loj-sweep",
            statement=(
                "Lojasiewicz inequality near bubbles: |Phi_1(u) - 4 pi n| <= C ||T_hat_1(u)||_1^(2 - beta) "
                "with one constant across the degree-1 bubble family."
            ),
            runner=_loj_sweep,
            verifications=("lojasiewicz", "constant-drift", "lambda-slope"),
            artifacts=("lojasiewicz.jsonl", "lojasiewicz.csv", "report_loj_sweep.json"),
            default_nodes=512,
        ),
        ExperimentPreset(
            name="monotonicity-refinement",
            statement=(
                "Gaussian monotonicity: d/dt Phi_tau = -||T_hat_tau||^2 and d/dt Psi_tau = -||r T_hat_tau||^2 "
                "along the flow, observed under simultaneous (h, dt) refinement."
            ),
            runner=_monotonicity_refinement,
            verifications=("monotonicity-refinement",),
            artifacts=("report_monotonicity_refinement.json",),
            default_nodes=256,
        ),
        ExperimentPreset(
            name="blowup-equivariant",
            statement=(
                "Finite-time concentration of an equivariant flow above 4 pi: the barrier for phi, the psi <= 4 delta "
                "chain, the energy identity with one degree-1 bubble and no neck between body map and bubble."
            ),
            runner=_blowup_stage,
            verifications=(
                "barriers", "psi-integral", "psi-bar", "rdu-bound", "oscillation", "energy-identity", "no-neck",
            ),
            artifacts=(
                "run/run.jsonl",
                "run/history.npz",
                "analysis/report_barriers.json",
                "analysis/report_energy_identity.json",
                "analysis/energy_identity.csv",
                "analysis/report_oscillation.json",
                "analysis/report_body_map.json",
                "report_blowup.json",
            ),
            config=BLOWUP_CONFIG,
        ),
        ExperimentPreset(
            name="oscillation-constant",
            statement=(
                "Oscillation decay on dyadic annuli up to the singular time (Holder-type for alpha = 2), "
                "and zero oscillation for a constant map."
            ),
            runner=_oscillation_constant,
            verifications=("oscillation-alpha2", "constant-map-oscillation"),
            artifacts=(
                "analysis/report_oscillation_alpha2.json",
                "constant_run/run.jsonl",
                "report_constant_oscillation.json",
            ),
            config=CONSTANT_CONFIG,
        ),
    )
}


def preset_names() -> List[str]:
    return sorted(PRESETS)


def run_preset(
    name: str,
    out_dir: Optional[Union[str, Path]] = None,
    grid_n: Optional[int] = None,
    jobs: int = 1,
    seed: Optional[int] = None,
    run_dir: Optional[Union[str, Path]] = None,
) -> Tuple[int, Path]:
    """
    Run a preset end to end.

    Args:
        name: Registry key
        out_dir: Artifact directory (defaults to PRESET_DIR/<name>)
        grid_n: Nodes per side overriding the preset default
        jobs: Worker processes for corpus-parallel checks
        seed: Corpus and perturbation seed
        run_dir: Existing run directory for presets that analyze a stored run

    Returns:
        (exit status, artifact directory)

    Raises:
        KeyError: if the preset is unknown
        FileNotFoundError: if run_dir holds no run
    """
    if name not in PRESETS:
        raise KeyError(f"Unknown preset '{name}'. Available: {', '.join(preset_names())}")
    preset = PRESETS[name]
    out_dir = Path(out_dir) if out_dir else settings.PRESET_DIR / name
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = PresetContext(
        out_dir, grid_n, jobs, settings.CORPUS_SEED if seed is None else seed, Path(run_dir) if run_dir else None
    )

    logger.info(f"ℹ️  Preset {name}: {preset.statement}")
    status, summary = preset.runner(preset, ctx)

    missing = [artifact for artifact in preset.artifacts if not (out_dir / artifact).exists()]
    summary = dict(summary, preset=name, verifications=list(preset.verifications), exit_status=status)
    if missing:
        summary["missing_artifacts"] = missing
        logger.error(f"❌ Preset {name} did not produce: {', '.join(missing)}")
        status = EXIT_ERROR
    write_summary(out_dir, name, summary)
    if status == EXIT_OK:
        logger.info(f"✓ Preset {name} passed ({out_dir})")
    else:
        logger.warning(f"⚠️  Preset {name} finished with exit status {status} ({out_dir})")
    return status, out_dir
