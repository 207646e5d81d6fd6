"""
Verification workflows shared by the CLI subcommands and the presets.

Each workflow writes its artifacts into an output directory and returns an
exit status: 0 when every executed check passed (or was degenerate,
not-applicable, recorded or under-sampled), 2 when any check failed.
"""
import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from tqdm import tqdm

from config import settings
from src.analysis.inequality_lab import (
    Certificate,
    LojParams,
    check_flow_barriers,
    check_monotonicity_residuals,
    check_poincare_T,
    check_poincare_rdu,
    check_psi_bar_claim,
    check_psi_integral_bound,
    estimate_critical_level,
    fit_lojasiewicz_constant,
    loj_certificate,
    select_entry_radius,
)
from src.analysis.singularity_analysis import (
    body_map,
    check_oscillation_bound,
    check_rdu_bound,
    energy_identity_check,
    geodesic_distance,
)
from src.diagnostics.gaussian_diagnostics import State
from src.errors import FlowAbortError
from src.experiments.config_parser import InitSpec, build_initial, parse_config
from src.experiments.corpus import MANIFEST_NAME, load_corpus
from src.experiments.run_store import RunWriter, atomic_write_json, load_run, write_certificates, write_report
from src.flow.flow_engine import FlowConfig, FlowRun, recompute_diagnostics, run as run_flow, singular_time_estimate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED_CHECK = 2
POINCARE_TAUS = (0.25, 1.0, 4.0)
# Largest geodesic distance between the body-map and bubble limit values
NO_NECK_TOLERANCE = 0.1
IDENTITY_CSV = "energy_identity.csv"
IDENTITY_COLUMNS = ["r", "E_inner", "sum_bubbles", "gap"]


def exit_status(certificates: Iterable[Certificate] = (), reports: Iterable[Dict[str, Any]] = ()) -> int:
    """2 if any certificate or report failed, else 0."""
    if any(not cert.ok for cert in certificates):
        return EXIT_FAILED_CHECK
    if any(report.get("status") == "fail" for report in reports):
        return EXIT_FAILED_CHECK
    return EXIT_OK


def simulate(config: FlowConfig, init: InitSpec, out_dir: Union[str, Path]) -> FlowRun:
    """
    Run the flow and stream it into a run directory.

    Raises:
        FlowAbortError: after abort_dump.json has been written
    """
    initial = build_initial(config, init)
    writer = RunWriter(out_dir, config, init)
    try:
        flow_run = run_flow(config, initial, init.to_dict(), on_record=writer.on_record)
    except FlowAbortError as e:
        writer.write_abort(e)
        raise
    writer.finish(flow_run)
    return flow_run


def load_states(source: Union[str, Path]) -> List[Tuple[str, State]]:
    """(tag, state) pairs from a corpus directory or from the usable states of a run directory."""
    source = Path(source)
    if (source / MANIFEST_NAME).exists():
        return [(member.spec.tag, member.field) for member in load_corpus(source)]
    flow_run = load_run(source)
    return [
        (f"t={record.t:.6g}", state)
        for record, state in zip(flow_run.records, flow_run.states)
        if not record.near_stop
    ]


def _poincare_certificates(item: Tuple[str, State, Sequence[float]]) -> List[Certificate]:
    tag, state, taus = item
    certificates = []
    for tau in taus:
        for check in (check_poincare_rdu, check_poincare_T):
            certificate = check(state, tau)
            certificate.metadata["tag"] = tag
            certificates.append(certificate)
    return certificates


def certify_poincare(
    states: Sequence[Tuple[str, State]],
    taus: Sequence[float] = POINCARE_TAUS,
    jobs: int = 1,
) -> List[Certificate]:
    """Both weighted Poincare certificates for every state and scale."""
    items = [(tag, state, tuple(taus)) for tag, state in states]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            batches = list(tqdm(pool.map(_poincare_certificates, items), total=len(items), desc="Poincare"))
    else:
        batches = [_poincare_certificates(item) for item in tqdm(items, desc="Poincare")]
    return [certificate for batch in batches for certificate in batch]


def summarize_certificates(certificates: Sequence[Certificate]) -> Dict[str, Any]:
    counts: Dict[str, int] = {}
    for certificate in certificates:
        counts[certificate.status] = counts.get(certificate.status, 0) + 1
    finite = [c.ratio for c in certificates if math.isfinite(c.ratio)]
    return {"total": len(certificates), "statuses": counts, "max_ratio": max(finite, default=0.0)}


def verify_poincare(source: Union[str, Path], out_dir: Union[str, Path], jobs: int = 1) -> Tuple[int, Dict[str, Any]]:
    certificates = certify_poincare(load_states(source), jobs=jobs)
    write_certificates(out_dir, certificates, "poincare")
    summary = summarize_certificates(certificates)
    write_report(out_dir, "poincare", summary)
    return exit_status(certificates), summary


def verify_lojasiewicz(
    source: Union[str, Path],
    out_dir: Union[str, Path],
    params: Optional[LojParams] = None,
) -> Tuple[int, Dict[str, Any]]:
    """Lojasiewicz certificates for every state; runs also get the barrier and psi reports."""
    params = params or LojParams()
    source = Path(source)
    certificates = []
    for tag, state in tqdm(load_states(source), desc="Lojasiewicz"):
        certificate = loj_certificate(state, params)
        certificate.metadata["tag"] = tag
        certificates.append(certificate)
    write_certificates(out_dir, certificates, "lojasiewicz")

    summary = summarize_certificates(certificates)
    summary["K_fit"] = fit_lojasiewicz_constant(certificates, params.alpha)
    reports = []
    if not (source / MANIFEST_NAME).exists():
        flow_run = load_run(source)
        reports.append(check_flow_barriers(flow_run, params))
        psi = check_psi_integral_bound(flow_run, params)
        certificates.append(psi)
        summary.update(barriers=reports[0], psi_integral=psi.to_dict())
    write_report(out_dir, "lojasiewicz", summary)
    return exit_status(certificates, reports), summary


def verify_monotonicity(source: Union[str, Path], out_dir: Union[str, Path]) -> Tuple[int, Dict[str, Any]]:
    flow_run = load_run(source, states=False)
    report = check_monotonicity_residuals(flow_run)
    write_report(out_dir, "monotonicity", report)
    return exit_status(reports=[report]), report


def second_pass(flow_run: FlowRun, params: LojParams) -> Tuple[FlowRun, LojParams, Dict[str, Any]]:
    """
    Rebuild diagnostics with T1 from the concentration stop and E0 from the Phi series.

    T1 = stop time + final batch, E0 = nearest multiple of 4 pi, and R the
    largest candidate whose barrier entry condition holds (else min(R, sqrt(T1))).
    """
    if not flow_run.concentrated:
        return flow_run, params, {"T1": flow_run.config.T1, "R": flow_run.config.R, "E0": params.E0}
    T1 = singular_time_estimate(flow_run)
    R = min(flow_run.config.R, math.sqrt(T1))
    level = estimate_critical_level(recompute_diagnostics(flow_run, T1, R, 0.0))
    params = replace(params, E0=level["level"])
    rebuilt = recompute_diagnostics(flow_run, T1, R, params.E0)
    entry = select_entry_radius(rebuilt, params)
    if entry is not None and entry != R:
        R = entry
        rebuilt = recompute_diagnostics(flow_run, T1, R, params.E0)
    logger.info(f"ℹ️  Second pass: T1={T1:.6g}, R={R:.4g}, E0={params.E0:.6g} (n={level['n']})")
    return rebuilt, params, {"T1": T1, "R": R, "E0": params.E0, "critical_level": level, "entry_radius": entry}


def analyze_run(flow_run: FlowRun, out_dir: Union[str, Path], params: Optional[LojParams] = None) -> Tuple[int, Dict[str, Any]]:
    """
    Full singularity pipeline on a run: second-pass diagnostics, barriers,
    psi chain, psi-bar claim, r|du| and oscillation bounds, energy identity
    and body map with the no-neck consistency check.
    """
    params = params or LojParams()
    rebuilt, params, pass_info = second_pass(flow_run, params)
    reports = {"second_pass": pass_info}
    reports["barriers"] = check_flow_barriers(rebuilt, params)
    psi = check_psi_integral_bound(rebuilt, params)
    reports["psi_integral"] = psi.to_dict()
    reports["psi_bar"] = check_psi_bar_claim(rebuilt)
    reports["rdu_bound"] = check_rdu_bound(rebuilt, eps0=params.eps0)
    reports["oscillation"] = check_oscillation_bound(rebuilt, params)
    reports["oscillation_alpha2"] = check_oscillation_bound(rebuilt, replace(params, alpha=2.0))

    identity = energy_identity_check(rebuilt, eps0=params.eps0)
    bubbles = identity.pop("bubble_reports")
    reports["energy_identity"] = identity
    write_identity_csv(out_dir, identity["rows"])
    body = body_map(rebuilt, eps0=params.eps0)
    reports["body_map"] = body.to_dict()
    if bubbles:
        distance = geodesic_distance(body.limit_value, bubbles[0].limit_value)
        reports["no_neck"] = {
            "distance": distance,
            "tolerance": NO_NECK_TOLERANCE,
            "status": "pass" if distance <= NO_NECK_TOLERANCE else "fail",
        }
    else:
        reports["no_neck"] = {"status": "not-applicable", "reason": "no bubble extracted"}

    for name, report in reports.items():
        write_report(out_dir, name, report)
    status = exit_status([psi], [r for r in reports.values() if isinstance(r, dict)])
    return status, reports


def write_identity_csv(out_dir: Union[str, Path], rows: Sequence[Dict[str, float]]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / IDENTITY_CSV
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=IDENTITY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return path


def bubbles(run_dir: Union[str, Path], out_dir: Union[str, Path], eps0: float = settings.EPS0) -> Tuple[int, Dict[str, Any]]:
    """
    Bubble reports and the energy-identity table for the last state of a run.

    Writes report_bubbles.json and energy_identity.csv (r, E_inner, sum_bubbles, gap).
    """
    flow_run = load_run(run_dir)
    identity = energy_identity_check(flow_run, eps0=eps0)
    identity.pop("bubble_reports")
    write_report(out_dir, "bubbles", identity)
    write_identity_csv(out_dir, identity["rows"])
    return EXIT_OK, identity


def sweep(
    config_path: Union[str, Path],
    key: str,
    values: Sequence[str],
    out_dir: Union[str, Path],
    overrides: Optional[Dict[str, Any]] = None,
    jobs: int = 1,
) -> Tuple[int, List[Dict[str, Any]]]:
    """
    One run per value of a dotted config key, each in its own directory.

    Returns:
        Exit status and one summary row per sweep point (also written to sweep.jsonl)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = []
    for value in values:
        config, init = parse_config(config_path, dict(overrides or {}, **{key: value}))
        tasks.append((key, value, config, init, str(out_dir / f"{key}={value}")))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(tqdm(pool.map(_sweep_point, tasks), total=len(tasks), desc=f"Sweep {key}"))
    else:
        rows = [_sweep_point(task) for task in tqdm(tasks, desc=f"Sweep {key}")]

    with open(out_dir / "sweep.jsonl", "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    status = EXIT_ERROR if any(row["status"] == "aborted" for row in rows) else EXIT_OK
    return status, rows


def _sweep_point(task) -> Dict[str, Any]:
    key, value, config, init, run_dir = task
    row = {"key": key, "value": value, "run_dir": run_dir}
    try:
        flow_run = simulate(config, init, run_dir)
    except FlowAbortError as e:
        row.update(status="aborted", message=str(e))
        return row
    final = flow_run.records[-1]
    row.update(
        status="ok",
        stop_reason=flow_run.stop_reason,
        t_stop=flow_run.t_stop,
        records=len(flow_run.records),
        energy=final.energy,
        max_du=final.max_du,
    )
    return row


def write_summary(out_dir: Union[str, Path], name: str, summary: Dict[str, Any]) -> Path:
    path = Path(out_dir) / f"{name}_summary.json"
    atomic_write_json(path, summary)
    return path
