import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from wearagen.cli import main, sha256
from wearagen.data import read_windows


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Full-size synthetic cohort, preprocessed once, plus a briefly trained tiny model."""
    root = tmp_path_factory.mktemp("run")
    assert main(["synth-data", "--output", str(root / "cohort.csv")]) == 0
    assert main(["preprocess", "--input", str(root / "cohort.csv"), "--output-dir", str(root / "w")]) == 0
    assert main(["train", "--windows", str(root / "w/train.agwb"), "--val-windows",
                 str(root / "w/val.agwb"), "--output-dir", str(root / "m"), "--tiny",
                 "--epochs", "1", "--max-steps", "5"]) == 0
    return root


def test_synth_rows_and_checksum(pipeline, tmp_path):
    with open(pipeline / "cohort.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["individual_id", "day_index", "resting_hr", "sleep_minutes", "steps",
                       "coverage"]
    assert len(rows) - 1 == 200 * 365
    manifest = json.loads((pipeline / "cohort.csv.manifest.json").read_text())
    assert manifest["outputs"][str(pipeline / "cohort.csv")] == sha256(pipeline / "cohort.csv")
    assert manifest["seeds"] == {"seed": 42}
    assert main(["synth-data", "--output", str(tmp_path / "again.csv")]) == 0
    assert sha256(tmp_path / "again.csv") == sha256(pipeline / "cohort.csv")


def test_preprocess_outputs(pipeline):
    train, spec = read_windows(pipeline / "w/train.agwb")
    assert len(train) == 160 * 17
    assert len(train.individuals()) == 160
    summary = json.loads((pipeline / "w/preprocess_summary.json").read_text())
    assert summary["splits"]["val"] == {"individuals": 20, "windows": 340}
    values = np.load(pipeline / "w/train.values.npy")
    assert values.shape == train.windows.shape
    assert json.loads((pipeline / "w/scaler.json").read_text()) == spec.to_dict()


def test_train_outputs(pipeline):
    names = {p.name for p in (pipeline / "m").iterdir()}
    assert {"epoch01.agck", "final.agck", "loss_log.csv", "val_log.json", "manifest.json"} <= names
    assert len((pipeline / "m/loss_log.csv").read_text().splitlines()) == 1 + 5


def test_generate_rows_and_options(pipeline):
    out = pipeline / "gen.csv"
    assert main(["generate", "--checkpoint", str(pipeline / "m/final.agck"), "--windows",
                 str(pipeline / "w/test.agwb"), "--output", str(out), "--bin-trace",
                 str(pipeline / "trace.csv"), "--long-csv", str(pipeline / "long.csv")]) == 0
    assert len(out.read_text().splitlines()) == 1 + 10 * 120
    again = pipeline / "gen2.csv"
    main(["generate", "--checkpoint", str(pipeline / "m/final.agck"), "--windows",
          str(pipeline / "w/test.agwb"), "--output", str(again)])
    assert again.read_bytes() == out.read_bytes()
    test, _ = read_windows(pipeline / "w/test.agwb")
    iid, day = test.sources[3]
    one = pipeline / "one.csv"
    assert main(["generate", "--checkpoint", str(pipeline / "m/final.agck"), "--windows",
                 str(pipeline / "w/test.agwb"), "--output", str(one), "--prompt", f"{iid}:{day}",
                 "--horizon", "5"]) == 0
    assert len(one.read_text().splitlines()) == 6


def test_evaluate_real_vs_real(pipeline):
    out = pipeline / "ev_self"
    assert main(["evaluate", "--windows", str(pipeline / "w/test.agwb"), "--output-dir", str(out)]) == 0
    report = json.loads((out / "eval_report.json").read_text())
    assert report["cosine"]["intra_real"] == report["cosine"]["intra_generated"]
    assert report["mae"] is None
    header = (out / "features.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 2 + 63


def test_evaluate_generated_deterministic(pipeline):
    args = ["evaluate", "--windows", str(pipeline / "w/test.agwb"), "--checkpoint",
            str(pipeline / "m/final.agck"), "--generated", str(pipeline / "gen.csv"),
            "--max-pairs", "100", "--seed", "7", "--training-size", "2720"]
    assert main(args + ["--output-dir", str(pipeline / "ev_a")]) == 0
    assert main(args + ["--output-dir", str(pipeline / "ev_b")]) == 0
    a = (pipeline / "ev_a/eval_report.json").read_text()
    assert a == (pipeline / "ev_b/eval_report.json").read_text()
    report = json.loads(a)
    assert report["cosine"]["cross"]["n_pairs"] == 100
    assert set(report["mae"]) == {"resting_hr", "sleep_minutes", "steps"}
    summary = (pipeline / "ev_a/summary.csv").read_text().splitlines()
    assert summary[0] == "training_size,mae_hr,mae_sleep,mae_steps"
    assert summary[1].startswith("2720,")


def test_exit_codes(tmp_path, capsys):
    assert main(["synth-data", "--individuals", "0", "--output", str(tmp_path / "x.csv")]) == 2
    assert main(["generate", "--checkpoint", "a", "--windows", "b", "--temperature-hr", "0"]) == 2
    assert main(["preprocess", "--input", str(tmp_path / "missing.csv"), "--output-dir",
                 str(tmp_path / "o")]) == 2
    (tmp_path / "empty.csv").write_text("")
    assert main(["preprocess", "--input", str(tmp_path / "empty.csv"), "--output-dir",
                 str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["no-such-command"]) == 2


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "wearagen", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("synth-data", "preprocess", "train", "generate", "evaluate", "reproduce"):
        assert sub in out.stdout
    out = subprocess.run([sys.executable, "-m", "wearagen", "train", "--help"], capture_output=True,
                         text=True)
    assert "--decay-interval" in out.stdout and "(default: 5)" in out.stdout


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"individuals": 3, "days": 30, "seed": 5}))
    assert main(["synth-data", "--config", str(cfg), "--days", "21", "--output", str(tmp_path / "a.csv")]) == 0
    rows = (tmp_path / "a.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 21
    conf_dir = tmp_path / "conf"
    conf_dir.mkdir()
    (conf_dir / "synth-data.json").write_text(json.dumps({"individuals": 2, "days": 22}))
    monkeypatch.setenv("WEARAGEN_CONFIG_DIR", str(conf_dir))
    assert main(["synth-data", "--output", str(tmp_path / "b.csv")]) == 0
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 1 + 2 * 22
    manifest = json.loads((tmp_path / "b.csv.manifest.json").read_text())
    assert manifest["config"]["individuals"] == 2


def test_reproduce_tiny(tmp_path):
    assert main(["reproduce", "--output-dir", str(tmp_path), "--individuals", "20", "--days", "84",
                 "--fractions", "0.1", "1.0", "--epochs", "1", "--tiny", "--prompts", "4",
                 "--max-pairs", "50"]) == 0
    trend = json.loads((tmp_path / "trend.json").read_text())
    assert [t["fraction"] for t in trend] == [0.1, 1.0]
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 3
