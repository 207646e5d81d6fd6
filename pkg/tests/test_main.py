"""End-to-end tests of the command line and its exit codes."""
import json

import pytest
import yaml

from main import main
from src.experiments.corpus import Corpus, CorpusMember, MapSpec, write_corpus
from src.experiments.presets import PRESETS, lambda_slope_report, run_preset
from src.experiments.run_store import RECORDS_NAME
from src.experiments.workflows import EXIT_ERROR, EXIT_FAILED_CHECK, EXIT_OK
from src.fields.field_core import make_bubble
from src.fields.sphere_field import Grid, SphereField

CONSTANT_CONFIG = {
    "grid": {"L": 8.0, "N": 32},
    "flow": {"t_end": 0.5},
    "diag": {"T1": 1.0, "R": 1.0},
    "init": {"kind": "constant"},
}


@pytest.fixture
def constant_config(tmp_path):
    path = tmp_path / "constant.yaml"
    path.write_text(yaml.safe_dump(CONSTANT_CONFIG), encoding="utf-8")
    return path


@pytest.fixture
def constant_run(tmp_path, constant_config):
    run_dir = tmp_path / "run"
    assert main(["simulate", str(constant_config), "--out", str(run_dir)]) == EXIT_OK
    return run_dir


def test_simulate_writes_run_directory(constant_run):
    assert (constant_run / RECORDS_NAME).exists()
    assert (constant_run / "config.echo").exists()


def test_invalid_config_exits_with_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("flow:\n  t_ennd: 1.0\n", encoding="utf-8")
    assert main(["simulate", str(path), "--out", str(tmp_path / "out")]) == EXIT_ERROR


def test_missing_config_exits_with_error(tmp_path):
    assert main(["simulate", str(tmp_path / "missing.yaml")]) == EXIT_ERROR


def test_verify_monotonicity_passes_on_a_clean_run(constant_run, tmp_path):
    assert main(["verify", "monotonicity", str(constant_run), "--out", str(tmp_path / "mono")]) == EXIT_OK


def test_verify_monotonicity_fails_on_increasing_phi(constant_run, tmp_path):
    path = constant_run / RECORDS_NAME
    records = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert len(records) >= 2
    for i, record in enumerate(records):
        record["Phi"] = 1.0 + 100.0 * i
    path.write_text("".join(json.dumps(record) + "\n" for record in records), encoding="utf-8")
    assert main(["verify", "monotonicity", str(constant_run), "--out", str(tmp_path / "mono")]) == EXIT_FAILED_CHECK


def test_verify_poincare_on_a_small_corpus(tmp_path):
    grid = Grid(8.0, 64)
    corpus = Corpus(seed=0, grid=grid)
    corpus.members.append(CorpusMember(MapSpec("constant", {}, "constant/north"), SphereField.constant(grid)))
    corpus.members.append(CorpusMember(MapSpec("bubble", {"lambda": 1.0}, "bubble/lam1"), make_bubble(grid, 1, 1.0)))
    write_corpus(corpus, tmp_path / "corpus")

    out = tmp_path / "poincare"
    assert main(["verify", "poincare", str(tmp_path / "corpus"), "--out", str(out), "--jobs", "1"]) == EXIT_OK
    rows = [json.loads(line) for line in (out / "poincare.jsonl").read_text(encoding="utf-8").splitlines()]
    assert len(rows) == 2 * 2 * 3
    assert {row["status"] for row in rows} <= {"pass", "degenerate"}


def test_corpus_command_writes_manifest(tmp_path):
    out = tmp_path / "corpus"
    assert main(["corpus", "--grid-n", "32", "--seed", "3", "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 3
    assert manifest["grid"]["N"] == 32


def test_bubbles_on_a_run_without_concentration(constant_run, tmp_path):
    out = tmp_path / "bubbles"
    assert main(["bubbles", str(constant_run), "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report_bubbles.json").read_text(encoding="utf-8"))
    assert report["bubbles"] == []
    assert (out / "energy_identity.csv").exists()


def test_sweep_runs_every_value(constant_config, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", str(constant_config), "--param", "flow.t_end=0.1,0.2", "--out", str(out), "--jobs", "1"]) == EXIT_OK
    rows = [json.loads(line) for line in (out / "sweep.jsonl").read_text(encoding="utf-8").splitlines()]
    assert [row["status"] for row in rows] == ["ok", "ok"]
    assert [row["t_stop"] for row in rows] == pytest.approx([0.1, 0.2])


def test_gradient_check_preset(tmp_path):
    out = tmp_path / "gradient"
    assert main(["preset", "gradient-check", "--grid-n", "64", "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "gradient-check_summary.json").read_text(encoding="utf-8"))
    assert summary["status"] == "pass"
    assert len(summary["rows"]) == 5


def test_unknown_preset_is_rejected():
    assert "blowup-equivariant" in PRESETS
    with pytest.raises(KeyError):
        run_preset("no-such-preset")


def test_interrupted_verify_exits_with_error(monkeypatch, tmp_path):
    def interrupt(args):
        raise KeyboardInterrupt

    monkeypatch.setattr("main.cmd_verify", interrupt)
    assert main(["verify", "monotonicity", str(tmp_path)]) == EXIT_ERROR


def test_oscillation_preset_analyzes_the_given_run(constant_run, tmp_path):
    out = tmp_path / "preset"
    status, _ = run_preset("oscillation-constant", out, grid_n=32, run_dir=constant_run)
    # a run without concentration has no dyadic annuli, so the alpha = 2 gate fails
    assert status == EXIT_FAILED_CHECK
    gate = json.loads((out / "analysis" / "report_oscillation_alpha2.json").read_text(encoding="utf-8"))
    assert gate["status"] == "fail"
    assert gate["annuli"] == 0
    assert gate["minimum_annuli"] == 4
    constant = json.loads((out / "report_constant_oscillation.json").read_text(encoding="utf-8"))
    assert constant["status"] == "pass"
    assert not (out / "run").exists()
    assert not (out / "report_blowup.json").exists()


def test_oscillation_preset_rejects_a_missing_run(tmp_path):
    with pytest.raises(FileNotFoundError):
        run_preset("oscillation-constant", tmp_path / "preset", grid_n=32, run_dir=tmp_path / "nowhere")


def test_lambda_slope_report_judges_the_band():
    linear = [(t, 0.3 * t) for t in (0.05, 0.1, 0.2, 0.4)]
    report = lambda_slope_report(linear)
    assert report["slope"] == pytest.approx(1.0)
    assert report["status"] == "pass"

    steep = [(t, 0.3 * t ** 1.45) for t in (0.05, 0.1, 0.2, 0.4)]
    report = lambda_slope_report(steep)
    assert report["slope"] == pytest.approx(1.45)
    assert report["status"] == "fail"
    assert report["band"] == [0.8, 1.2]

    assert lambda_slope_report([(0.1, 0.03)])["status"] == "under-sampled"
