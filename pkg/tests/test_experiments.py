"""Tests for configs, the corpus, run directories and verification workflows."""
import csv
import json
import math

import numpy as np
import pytest
import yaml

from config import settings
from src.analysis.inequality_lab import Certificate
from src.diagnostics.gaussian_diagnostics import WeightedScale, weighted_quantities
from src.errors import ConfigError
from src.experiments.config_parser import DEFAULTS, build_config, build_initial, echo, merge_config, parse_config
from src.experiments.corpus import ENERGY_CAP, MANIFEST_NAME, generate_corpus, load_corpus, write_corpus
from src.experiments.run_store import (
    ECHO_NAME,
    HISTORY_NAME,
    META_NAME,
    RECORDS_NAME,
    kept_state_indices,
    load_run,
    read_certificates,
    write_certificates,
)
from src.experiments.workflows import EXIT_FAILED_CHECK, EXIT_OK, exit_status, simulate, verify_monotonicity
from src.fields.field_core import dirichlet_energy
from src.fields.radial_profile import RadialProfile
from src.fields.sphere_field import Grid

CONSTANT_RUN = {
    "grid": {"L": 8.0, "N": 32},
    "flow": {"t_end": 0.5, "snapshot_times": [0.25]},
    "diag": {"T1": 1.0, "R": 1.0},
    "init": {"kind": "constant"},
}
RADIAL_RUN = {
    "grid": {"L": 2.0, "N": 16},
    "flow": {"t_end": 0.01, "diagnostic_stride": 25},
    "diag": {"T1": 1.0, "R": 1.0},
    "init": {"kind": "equivariant", "profile": "bubble", "lambda": 0.5},
    "radial": {"first_spacing": 0.01, "ratio": 1.1},
}


@pytest.fixture(scope="module")
def corpus():
    return generate_corpus(7, Grid(8.0, 64))


def test_merge_config_fills_defaults():
    assert merge_config(None) == DEFAULTS
    merged = merge_config({"init": {"lambda": 0.2}})
    assert merged["init"]["lambda"] == 0.2
    assert merged["init"]["degree"] == 1


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="Unknown configuration key"):
        merge_config({"flow": {"t_ennd": 1.0}})
    with pytest.raises(ConfigError, match="Unknown configuration key"):
        merge_config({"solver": {"kind": "rk4"}})


def test_unknown_init_kind_is_rejected():
    with pytest.raises(ConfigError, match="init.kind"):
        merge_config({"init": {"kind": "spiral"}})


def test_flow_T1_alias_lands_in_diag():
    assert merge_config({"flow": {"T1": 3.0}})["diag"]["T1"] == 3.0


def test_string_numbers_are_coerced():
    # PyYAML reads 1e-4 (no dot) as a string
    merged = merge_config(yaml.safe_load("radial:\n  first_spacing: 1e-4\n"))
    assert merged["radial"]["first_spacing"] == pytest.approx(1e-4)


def test_fractional_integer_is_rejected():
    with pytest.raises(ConfigError, match="grid.N must be an integer"):
        merge_config({"grid": {"N": 64.5}})


def test_small_grid_is_rejected():
    with pytest.raises(ConfigError, match="grid.N must be at least 16"):
        build_config(merge_config({"grid": {"N": 8}}))


def test_T1_before_t_end_is_rejected():
    with pytest.raises(ConfigError, match="must exceed flow.t_end"):
        build_config(merge_config({"flow": {"t_end": 2.0}, "diag": {"T1": 1.0}}))


def test_echo_reproduces_the_config(tmp_path):
    config, init = parse_config(settings.PROJECT_ROOT / "configs" / "blowup.yaml")
    path = tmp_path / "echo.yaml"
    path.write_text(echo(config, init), encoding="utf-8")
    again, init_again = parse_config(path)
    assert again.to_dict() == config.to_dict()
    assert init_again.to_dict() == init.to_dict()
    assert init.mode == "equivariant"


def test_build_initial_overshoot_profile():
    config, init = build_config(merge_config({"init": {"kind": "equivariant"}}))
    p = build_initial(config, init)
    assert isinstance(p, RadialProfile)
    assert p.r_max == config.grid.half_width
    assert p.h_values[-1] > math.pi
    assert p.boundary_value[2] == -1.0


def test_corpus_is_deterministic(corpus):
    assert generate_corpus(7, Grid(8.0, 64)).digests() == corpus.digests()
    assert generate_corpus(8, Grid(8.0, 64)).digests() != corpus.digests()


def test_corpus_members(corpus):
    assert len(corpus) >= 30
    tags = [member.spec.tag for member in corpus]
    assert len(set(tags)) == len(tags)
    for member in corpus:
        assert member.field.invariant_violations() == {}
        assert dirichlet_energy(member.field) <= ENERGY_CAP


def test_corpus_reaches_the_large_norm_regime(corpus):
    scale = WeightedScale(1.0)
    large = [m for m in corpus if weighted_quantities(m.field, scale)["norm_That"] ** 2 > settings.EPS0]
    assert len(large) >= 5


def test_corpus_round_trip(tmp_path, corpus):
    write_corpus(corpus, tmp_path)
    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text(encoding="utf-8"))
    assert manifest["seed"] == 7
    loaded = load_corpus(tmp_path)
    assert loaded.digests() == corpus.digests()
    assert [m.spec.tag for m in loaded] == [m.spec.tag for m in corpus]


def test_simulate_writes_a_loadable_run(tmp_path):
    config, init = build_config(merge_config(CONSTANT_RUN))
    flow_run = simulate(config, init, tmp_path)

    for name in (ECHO_NAME, RECORDS_NAME, META_NAME, "snap_0.250000.sfld"):
        assert (tmp_path / name).exists()
    meta = json.loads((tmp_path / META_NAME).read_text(encoding="utf-8"))
    assert meta["mode"] == "2d" and meta["stop_reason"] == "t_end"

    loaded = load_run(tmp_path)
    assert loaded.mode == "2d"
    assert len(loaded.records) == len(loaded.states) == len(flow_run.records)
    assert loaded.records == flow_run.records
    assert 0.25 in loaded.snapshots
    assert loaded.config.to_dict() == config.to_dict()


def test_simulate_equivariant_run_keeps_history(tmp_path):
    config, init = build_config(merge_config(RADIAL_RUN))
    flow_run = simulate(config, init, tmp_path)
    assert (tmp_path / HISTORY_NAME).exists()

    loaded = load_run(tmp_path)
    assert loaded.mode == "equivariant"
    assert len(loaded.states) == len(flow_run.states)
    assert np.array_equal(loaded.final_state.h_values, flow_run.final_state.h_values)


def test_kept_state_indices_are_bounded(make_record, make_run):
    flow_run = make_run([make_record(0.005 * i) for i in range(100)])
    kept = kept_state_indices(flow_run, limit=48)
    assert len(kept) <= 48
    assert kept[0] == 0 and kept[-1] == 99
    assert kept == sorted(set(kept))


def test_certificate_files(tmp_path):
    certificates = [
        Certificate("poincare-rdu", 1.0, 2.0, 0.5, "a", True, "pass", {"tau": 1.0}),
        Certificate("poincare-T", 0.0, 0.0, 0.0, "b", True, "degenerate", {"tau": 1.0}),
    ]
    path = write_certificates(tmp_path, certificates, "poincare")
    assert read_certificates(path) == certificates
    with open(tmp_path / "poincare.csv", newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert [row["status"] for row in rows] == ["pass", "degenerate"]


def test_exit_status():
    passed = Certificate("x", 1.0, 2.0, 0.5, "a", True, "pass")
    failed = Certificate("x", 2.0, 1.0, 2.0, "a", False, "fail")
    degenerate = Certificate("x", 0.0, 0.0, 0.0, "a", True, "degenerate")
    assert exit_status([passed, degenerate], [{"status": "not-applicable"}]) == EXIT_OK
    assert exit_status([passed, failed]) == EXIT_FAILED_CHECK
    assert exit_status(reports=[{"status": "fail"}]) == EXIT_FAILED_CHECK


def test_verify_monotonicity_on_a_constant_run(tmp_path):
    config, init = build_config(merge_config(CONSTANT_RUN))
    simulate(config, init, tmp_path / "run")
    status, report = verify_monotonicity(tmp_path / "run", tmp_path / "out")
    assert status == EXIT_OK
    assert report["status"] == "pass"
    assert (tmp_path / "out" / "report_monotonicity.json").exists()
