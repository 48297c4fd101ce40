import json

import pytest

from protofuse.cli import run_cli
from protofuse.data_model import load_cohort


@pytest.fixture(scope="module")
def cohort_path(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    assert run_cli(["synth", "--patients", "12", "--d-embed", "16", "--genes", "24", "--seed", "3",
                    "--out", str(out)]) == 0
    return out / "manifest.json"


TRAIN_FLAGS = ["--epochs", "3", "--phase1-epochs", "1", "--model-dim", "8", "--batch-size", "4", "--lr", "1e-3"]


@pytest.fixture(scope="module")
def checkpoint_path(cohort_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "ckpt"
    assert run_cli(["train", "--cohort", str(cohort_path), "--out", str(out), *TRAIN_FLAGS]) == 0
    return out


def test_synth_writes_loadable_cohort(cohort_path):
    cohort = load_cohort(cohort_path)
    assert len(cohort) == 12 and cohort.d_embed == 16 and len(cohort.gene_ids) == 24


def test_train_outputs(checkpoint_path):
    for name in ("manifest.json", "train_log.tsv", "config.txt"):
        assert (checkpoint_path / name).exists()
    assert len((checkpoint_path / "train_log.tsv").read_text().splitlines()) == 5


def test_eval_writes_results(checkpoint_path, cohort_path, tmp_path, capsys):
    out = tmp_path / "res.tsv"
    code = run_cli(["eval", "--checkpoint", str(checkpoint_path), "--cohort", str(cohort_path),
                    "--missing-mode", "patient_wise", "--missing-rate", "0.5", "--strategy", "mean_fill",
                    "--out", str(out)])
    assert code == 0
    header, row = out.read_text().splitlines()
    assert header.startswith("task\tfold\tmode") and "\tpatient_wise\t0.50\tmean_fill\t" in row
    assert run_cli(["eval", "--checkpoint", str(checkpoint_path), "--cohort", str(cohort_path)]) == 0
    assert capsys.readouterr().out.startswith("task\t")


def test_explain_command(checkpoint_path, cohort_path, tmp_path):
    assert run_cli(["explain", "--checkpoint", str(checkpoint_path), "--cohort", str(cohort_path),
                    "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "index.json").read_text())["patients"]


def test_sweep_command(cohort_path, tmp_path):
    out = tmp_path / "sweep.tsv"
    code = run_cli(["sweep", "--cohort", str(cohort_path), "--folds", "3", "--rates", "0,1", "--modes",
                    "patient_wise", "--out", str(out), *TRAIN_FLAGS])
    assert code == 0
    assert len(out.read_text().splitlines()) == 1 + 2 * 2


@pytest.mark.parametrize("argv", [
    ["train", "--cohort", "x", "--out", "y", "--epochs", "0"],
    ["train", "--cohort", "x", "--out", "y", "--no-such-flag"],
    ["train", "--cohort", "x", "--out", "y", "--config", "/nonexistent/run.cfg"],
    ["eval", "--checkpoint", "c", "--cohort", "x", "--missing-rate", "0.5"],
    [],
])
def test_configuration_errors_exit_2(argv, capsys):
    assert run_cli(argv) == 2


def test_invalid_sweep_mode(cohort_path):
    assert run_cli(["sweep", "--cohort", str(cohort_path), "--modes", "column_wise", *TRAIN_FLAGS]) == 2


def test_missing_cohort_is_runtime_error(tmp_path):
    assert run_cli(["train", "--cohort", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 1


def test_gradcheck_command(capsys):
    assert run_cli(["gradcheck"]) == 0
    assert "gradient checks passed" in capsys.readouterr().out
