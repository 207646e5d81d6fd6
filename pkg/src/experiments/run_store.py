"""
Run directories.

    config.echo        fully-defaulted config (YAML)
    run.jsonl          one DiagnosticRecord per line, streamed while the run
                       progresses and rewritten at the end with final flags
    run_meta.json      mode, dt, stop reason, stop time, final batch duration
    snap_<t>.sfld      requested snapshots (.npz for radial profiles)
    history.npz        every radial profile of an equivariant run
    states/            a bounded subset of 2-D record states (rec_<i>.sfld)
    abort_dump.json    written instead of run_meta.json when a run aborts
    certificates.jsonl / certificates.csv, report_<name>.json

A directory is written by exactly one RunWriter, in time order.
"""
import csv
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np

from src.analysis.inequality_lab import Certificate
from src.diagnostics.gaussian_diagnostics import DiagnosticRecord
from src.errors import FlowAbortError
from src.experiments.config_parser import InitSpec, echo, parse_config
from src.fields.radial_profile import RadialProfile
from src.fields.snapshot_io import read_sfld, read_state, write_sfld, write_state
from src.flow.flow_engine import FlowConfig, FlowRun

logger = logging.getLogger(__name__)

ECHO_NAME = "config.echo"
RECORDS_NAME = "run.jsonl"
META_NAME = "run_meta.json"
HISTORY_NAME = "history.npz"
STATES_DIR = "states"
ABORT_NAME = "abort_dump.json"
CERTIFICATES_NAME = "certificates"
# Most 2-D record states kept on disk (evenly spaced plus the near-stop tail)
HISTORY_LIMIT = 48
CSV_COLUMNS = ["inequality_id", "status", "pass", "lhs", "rhs", "ratio", "inputs_digest"]


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
        handle.flush()
        os.fsync(handle.fileno())
    os.replace(tmp, path)


def atomic_write_json(path: Path, obj: Any) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def snapshot_name(t: float) -> str:
    return f"snap_{t:.6f}"


def kept_state_indices(flow_run: FlowRun, limit: int = HISTORY_LIMIT) -> List[int]:
    """Record indices whose 2-D states are written: evenly spaced plus the last records."""
    count = len(flow_run.states)
    tail = flow_run.config.near_stop_strides + 2
    if count <= limit:
        return list(range(count))
    spread = np.linspace(0, count - 1, max(limit - tail, 2)).round().astype(int)
    return sorted(set(spread.tolist()) | set(range(max(count - tail, 0), count)))


class RunWriter:
    """
    Writes one run directory.

    Args:
        out_dir: Directory (created if needed)
        config: Run configuration, echoed to config.echo
        init: Initial-data description
    """

    def __init__(self, out_dir: Union[str, Path], config: FlowConfig, init: InitSpec):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.init = init
        atomic_write_text(self.out_dir / ECHO_NAME, echo(config, init))
        self.records_path = self.out_dir / RECORDS_NAME
        self.records_path.write_text("", encoding="utf-8")
        self.count = 0

    def on_record(self, record: DiagnosticRecord) -> None:
        """Append one record (used as the flow's on_record callback)."""
        with open(self.records_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(record.to_dict(), default=_json_default) + "\n")
        self.count += 1

    def finish(self, flow_run: FlowRun) -> Path:
        """Rewrite the record stream with final flags and store states and snapshots."""
        lines = "".join(json.dumps(record.to_dict(), default=_json_default) + "\n" for record in flow_run.records)
        atomic_write_text(self.records_path, lines)

        for t, state in sorted(flow_run.snapshots.items()):
            write_state(state, self.out_dir / snapshot_name(t))

        if flow_run.mode == "equivariant":
            self._write_profile_history(flow_run)
        else:
            states_dir = self.out_dir / STATES_DIR
            states_dir.mkdir(exist_ok=True)
            for i in kept_state_indices(flow_run):
                write_sfld(flow_run.states[i], states_dir / f"rec_{i:05d}.sfld")

        atomic_write_json(
            self.out_dir / META_NAME,
            {
                "mode": flow_run.mode,
                "dt": flow_run.dt,
                "stop_reason": flow_run.stop_reason,
                "t_stop": flow_run.t_stop,
                "batch_duration": flow_run.batch_duration,
                "records": len(flow_run.records),
                "snapshots": sorted(flow_run.snapshots),
            },
        )
        logger.info(f"✓ Run written to {self.out_dir} ({len(flow_run.records)} records)")
        return self.out_dir

    def _write_profile_history(self, flow_run: FlowRun):
        first = flow_run.states[0]
        with open(self.out_dir / HISTORY_NAME, "wb") as handle:
            np.savez(
                handle,
                r_nodes=first.r_nodes,
                m=np.array(first.m),
                t=np.array([record.t for record in flow_run.records]),
                h=np.stack([state.h_values for state in flow_run.states]),
            )

    def write_abort(self, error: FlowAbortError) -> Path:
        path = self.out_dir / ABORT_NAME
        atomic_write_json(path, {"message": str(error), "dump": error.dump})
        logger.error(f"❌ Run aborted, dump written to {path}")
        return path


def write_certificates(out_dir: Union[str, Path], certificates: Iterable[Certificate], name: str = CERTIFICATES_NAME) -> Path:
    """certificates as <name>.jsonl (full) and <name>.csv (summary columns)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [cert.to_dict() for cert in certificates]
    atomic_write_text(
        out_dir / f"{name}.jsonl",
        "".join(json.dumps(row, sort_keys=True, default=_json_default) + "\n" for row in rows),
    )
    with open(out_dir / f"{name}.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    return out_dir / f"{name}.jsonl"


def read_certificates(path: Union[str, Path]) -> List[Certificate]:
    with open(path, "r", encoding="utf-8") as handle:
        return [Certificate.from_dict(json.loads(line)) for line in handle if line.strip()]


def write_report(out_dir: Union[str, Path], name: str, report: Dict[str, Any]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"report_{name}.json"
    atomic_write_json(path, report)
    return path


def read_records(path: Union[str, Path]) -> List[DiagnosticRecord]:
    with open(path, "r", encoding="utf-8") as handle:
        return [DiagnosticRecord.from_dict(json.loads(line)) for line in handle if line.strip()]


def load_run(run_dir: Union[str, Path], states: bool = True) -> FlowRun:
    """
    Rebuild a FlowRun from its directory.

    Equivariant runs come back complete. 2-D runs keep only the records whose
    states were written (see kept_state_indices), so records and states stay aligned.
    With states=False every record is returned and 2-D runs carry no states.

    Args:
        run_dir: Directory written by RunWriter
        states: Load stored states (and align the records to them)

    Returns:
        FlowRun
    """
    run_dir = Path(run_dir)
    meta_path = run_dir / META_NAME
    if not meta_path.exists():
        raise FileNotFoundError(f"{run_dir} has no {META_NAME} (aborted or unfinished run?)")
    config, init = parse_config(run_dir / ECHO_NAME)
    with open(meta_path, "r", encoding="utf-8") as handle:
        meta = json.load(handle)
    records = read_records(run_dir / RECORDS_NAME)

    history = []
    if meta["mode"] == "equivariant":
        with np.load(run_dir / HISTORY_NAME, allow_pickle=False) as archive:
            r_nodes, m, h = archive["r_nodes"], int(archive["m"]), archive["h"]
        history = [RadialProfile(r_nodes, row, m) for row in h]
    elif states:
        kept = sorted(int(path.stem.split("_")[1]) for path in (run_dir / STATES_DIR).glob("rec_*.sfld"))
        history = [read_sfld(run_dir / STATES_DIR / f"rec_{i:05d}.sfld") for i in kept]
        records = [records[i] for i in kept]

    snapshots = {}
    for path in sorted(run_dir.glob("snap_*")):
        snapshots[float(path.stem.split("_", 1)[1])] = read_state(path)

    return FlowRun(
        config=config,
        mode=meta["mode"],
        records=records,
        states=history,
        snapshots=snapshots,
        dt=meta["dt"],
        stop_reason=meta["stop_reason"],
        t_stop=meta["t_stop"],
        batch_duration=meta["batch_duration"],
        init=init.to_dict(),
    )
