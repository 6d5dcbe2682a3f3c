import json
import logging

import numpy as np
import pytest

from src.cli.app import run
from src.config import get_settings
from src.errors import NumericalError
from src.services import trainer
from src.services.datasets import save_csv
from src.services.model_store import load_model
from src.services.trainer import evaluate

STRUCTURE = "head = uniform(lin, 2, 2)"


@pytest.fixture(autouse=True)
def reset_process_state():
    """Each command reconfigures logging and may read settings; undo both."""
    get_settings.cache_clear()
    yield
    logging.getLogger().handlers.clear()
    get_settings.cache_clear()


@pytest.fixture
def trained_model(tmp_path, sim_csv, capsys):
    """A short training run saved to disk."""
    path = tmp_path / "model.json"
    code = run(["train", "--data", str(sim_csv), "--structure", STRUCTURE, "--epochs", "20", "--model-out", str(path)])
    assert code == 0
    capsys.readouterr()
    return path


@pytest.fixture
def trained_xor(tmp_path, xor_csv, capsys):
    """A briefly trained two-class model saved to disk."""
    path = tmp_path / "xor-model.json"
    code = run(["train", "--data", str(xor_csv), "--structure", STRUCTURE, "--epochs", "5", "--model-out", str(path)])
    assert code == 0
    capsys.readouterr()
    return path


def test_gen_writes_csv(tmp_path, capsys):
    """One header line plus n rows."""
    out = tmp_path / "sim.csv"
    assert run(["gen", "sim-reg", "--n", "50", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x,y"
    assert len(lines) == 51


def test_gen_to_stdout(capsys):
    """Without --out the CSV is the command result."""
    assert run(["gen", "xor", "--n", "10"]) == 0
    assert capsys.readouterr().out.splitlines()[0] == "x,y,label"


def test_train_prints_summary_and_writes_files(tmp_path, sim_csv, capsys):
    """The JSON summary is the only thing on stdout."""
    model_path = tmp_path / "model.json"
    history_path = tmp_path / "history.csv"
    code = run([
        "train", "--data", str(sim_csv), "--structure", STRUCTURE, "--epochs", "15",
        "--test-fraction", "0.25", "--model-out", str(model_path), "--history-out", str(history_path),
    ])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["epochs_run"] == 15
    assert summary["examples"] == 150
    assert summary["metric_name"] == "mse"
    assert summary["test_metric"] is not None
    assert load_model(model_path).target_names == ["y"]
    assert len(history_path.read_text().splitlines()) == 16


def test_train_classifier_from_structure_file(tmp_path, xor_csv, capsys):
    """--structure may name a file; labels switch the loss to nll."""
    structure = tmp_path / "xor.spine"
    structure.write_text("# one head per class\nhead = uniform(lin, 2, 2)\n")
    assert run(["train", "--data", str(xor_csv), "--structure", str(structure), "--epochs", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["metric_name"] == "accuracy"


def test_eval_reports_both_forms(trained_model, sim_csv, capsys):
    """The model's own form by default, max-min on request."""
    assert run(["eval", "--model", str(trained_model), "--data", str(sim_csv)]) == 0
    logexp = json.loads(capsys.readouterr().out)
    assert logexp["form"] == "logexp"
    assert logexp["examples"] == 200

    assert run(["eval", "--model", str(trained_model), "--data", str(sim_csv), "--form", "maxmin"]) == 0
    assert json.loads(capsys.readouterr().out)["form"] == "maxmin"


def test_eval_single_class_file_keeps_model_classes(tmp_path, xor_csv, xor_data, capsys):
    """A file holding only class "1" is scored against head 1, not renumbered."""
    model_path = tmp_path / "xor.json"
    args = ["train", "--data", str(xor_csv), "--structure", "head = uniform(lin, 4, 4)", "--epochs", "60", "--lr", "5e-2"]
    assert run([*args, "--model-out", str(model_path)]) == 0
    capsys.readouterr()

    ones = xor_data.subset(np.flatnonzero(xor_data.labels == 1))
    ones_path = tmp_path / "ones.csv"
    save_csv(ones, ones_path)
    assert run(["eval", "--model", str(model_path), "--data", str(ones_path)]) == 0
    reported = json.loads(capsys.readouterr().out)["metric"]
    assert reported == pytest.approx(evaluate(load_model(model_path), ones).metric)


def test_eval_unknown_class_exits_2(tmp_path, trained_xor, capsys):
    """Labels the model never saw are a data error naming the line."""
    path = tmp_path / "other.csv"
    path.write_text("x,y,label\n0.1,0.2,1\n0.3,-0.4,7\n")
    assert run(["eval", "--model", str(trained_xor), "--data", str(path)]) == 2
    assert "other.csv:3: label '7'" in capsys.readouterr().err


def test_short_row_exits_2(tmp_path, capsys):
    """A row missing its label never becomes an extra class."""
    path = tmp_path / "short.csv"
    path.write_text("x,y,label\n0.1,0.2,a\n0.3,0.4,b\n0.5,0.6\n")
    assert run(["train", "--data", str(path), "--structure", STRUCTURE, "--epochs", "1"]) == 2
    assert "short.csv:4: expected 3 fields" in capsys.readouterr().err


@pytest.mark.parametrize(
    "mode, extra",
    [
        ("saliency", []),
        ("active", []),
        ("components", ["--points", "20"]),
        ("perturb", ["--bins", "20", "--draws", "4"]),
    ],
)
def test_analyze_modes(tmp_path, trained_model, sim_csv, capsys, mode, extra):
    """Every mode writes its table and a JSON report."""
    out = tmp_path / f"{mode}.csv"
    code = run(["analyze", "--model", str(trained_model), "--data", str(sim_csv), "--mode", mode, "--out", str(out), *extra])
    assert code == 0
    assert out.exists()
    report = json.loads(capsys.readouterr().out)
    assert report["mode"] == mode
    assert report["num_components"] == 4


def test_merge_without_layer_copies(tmp_path, trained_model, capsys):
    """A model with no pre-linear layer is written unchanged."""
    out = tmp_path / "merged.json"
    assert run(["merge", "--model", str(trained_model), "--out", str(out)]) == 0
    assert load_model(out).theta.tolist() == load_model(trained_model).theta.tolist()


def test_missing_option_is_usage_error(sim_csv, capsys):
    """click usage problems exit with 1 and one error line."""
    assert run(["train", "--data", str(sim_csv)]) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_bad_structure_exits_1(sim_csv, capsys):
    """Grammar errors carry their position to stderr."""
    assert run(["train", "--data", str(sim_csv), "--structure", "head = (cos)", "--epochs", "1"]) == 1
    assert "1:9: expected" in capsys.readouterr().err


def test_bad_csv_exits_2(tmp_path, capsys):
    """Unparseable data is exit code 2."""
    path = tmp_path / "bad.csv"
    path.write_text("x,y\n1,oops\n")
    assert run(["train", "--data", str(path), "--structure", STRUCTURE, "--epochs", "1"]) == 2


def test_divergence_exits_3(sim_csv, monkeypatch, capsys):
    """Non-finite training is exit code 3."""

    def explode(*args, **kwargs):
        raise NumericalError("component 0 evaluated to a non-finite value", component=0)

    monkeypatch.setattr(trainer, "_chunk_objective", explode)
    assert run(["train", "--data", str(sim_csv), "--structure", STRUCTURE, "--epochs", "3"]) == 3
    assert "diverged" in capsys.readouterr().err


def test_target_needs_one_region_mode(trained_model, sim_csv, capsys):
    """--region and --auto are exclusive."""
    code = run(["target", "--model", str(trained_model), "--data", str(sim_csv), "--region", "x0:0:0.5", "--auto"])
    assert code == 1


def test_config_file_supplies_defaults(tmp_path, sim_csv, capsys):
    """Keys in the run file become flag defaults; explicit flags still win."""
    config = tmp_path / "run.env"
    config.write_text("EPOCHS=4\nlr=0.05\n")
    assert run(["--config", str(config), "train", "--data", str(sim_csv), "--structure", STRUCTURE]) == 0
    assert json.loads(capsys.readouterr().out)["epochs_run"] == 4

    args = ["--config", str(config), "train", "--data", str(sim_csv), "--structure", STRUCTURE, "--epochs", "2"]
    assert run(args) == 0
    assert json.loads(capsys.readouterr().out)["epochs_run"] == 2


def test_threads_from_environment(sim_csv, monkeypatch, capsys):
    """SPINE_THREADS feeds the worker count when --threads is absent."""
    monkeypatch.setenv("SPINE_THREADS", "2")
    seen = {}
    original = trainer.Trainer.fit

    def spy(self, *args, **kwargs):
        seen["threads"] = self.config.threads
        return original(self, *args, **kwargs)

    monkeypatch.setattr(trainer.Trainer, "fit", spy)
    assert run(["train", "--data", str(sim_csv), "--structure", STRUCTURE, "--epochs", "2"]) == 0
    assert seen["threads"] == 2
