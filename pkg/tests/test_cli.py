import json
from pathlib import Path

import pytest

from app.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main
from app.harness.heatmap import read_pgm
from app.models.checkpoint import decode, load_checkpoint


@pytest.fixture
def workspace(tmp_path: Path) -> Path:
    data = tmp_path / "data.json"
    model = tmp_path / "model.bin"
    assert main(["gen", "--n", "4", "--seed", "2", "--grid", "4", "--out", str(data)]) == EXIT_OK
    assert main(["train", "--dataset", str(data), "--epochs", "0", "--out", str(model)]) == EXIT_OK
    return tmp_path


def test_gen_and_train_outputs(workspace: Path) -> None:
    payload = json.loads((workspace / "data.json").read_text())
    assert len(payload["samples"]) == 4
    model = load_checkpoint(workspace / "model.bin")
    assert model.config.grid == 4
    extra = decode((workspace / "model.bin").read_bytes())[2]
    assert extra["steps"] == 0
    assert extra["initial_loss"] is None


def test_steer_writes_trace_and_heatmaps(workspace: Path, capsys: pytest.CaptureFixture) -> None:
    capsys.readouterr()
    trace = workspace / "trace.csv"
    heatmap = workspace / "maps" / "after.pgm"
    code = main(
        [
            "steer",
            "--model", str(workspace / "model.bin"),
            "--dataset", str(workspace / "data.json"),
            "--image-idx", "1",
            "--optimizer", "gd",
            "--iterations", "2",
            "--trace", str(trace),
            "--heatmap", str(heatmap),
        ]
    )
    assert code == EXIT_OK
    assert trace.read_text().splitlines()[0].startswith("iter,energy")
    assert read_pgm(heatmap).shape == (4, 4)
    assert (workspace / "maps" / "after.before.pgm").exists()
    assert (workspace / "maps" / "after.csv").exists()
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result["index"] == 1


def test_eval_writes_report_and_timing(workspace: Path) -> None:
    report = workspace / "report.json"
    code = main(
        [
            "eval",
            "--model", str(workspace / "model.bin"),
            "--dataset", str(workspace / "data.json"),
            "--modes", "plain,gd",
            "--iterations", "1",
            "--report", str(report),
        ]
    )
    assert code == EXIT_OK
    body = json.loads(report.read_text())
    assert set(body["accuracy"]) == {"plain", "gd"}
    assert (workspace / "report.timing.json").exists()


def test_sweep_writes_csv(workspace: Path) -> None:
    out = workspace / "sweep.csv"
    code = main(
        [
            "sweep",
            "--model", str(workspace / "model.bin"),
            "--dataset", str(workspace / "data.json"),
            "--param", "iterations",
            "--values", "0,1",
            "--no-early-stop",
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    assert len(out.read_text().splitlines()) == 3


def test_usage_and_io_errors(workspace: Path) -> None:
    bad_cfg = workspace / "bad.cfg"
    bad_cfg.write_text("alhpa = 3\n")
    common = ["--dataset", str(workspace / "data.json"), "--report", str(workspace / "r.json")]
    assert main(["eval", "--model", str(workspace / "model.bin"), "--config", str(bad_cfg), *common]) == EXIT_USAGE
    assert main(["eval", "--model", str(workspace / "missing.bin"), *common]) == EXIT_IO
    assert main(["eval", "--model", str(workspace / "model.bin"), "--modes", "beam", *common]) == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
    assert main(["steer", "--model", "m.bin"]) == EXIT_USAGE
    steer = ["steer", "--model", str(workspace / "model.bin"), "--dataset", str(workspace / "data.json")]
    assert main([*steer, "--image-idx", "9"]) == EXIT_USAGE


def test_selftest_quick_passes(capsys: pytest.CaptureFixture) -> None:
    assert main(["selftest", "--quick"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)
