import subprocess
import sys

import numpy as np
import pytest

from iidlab import cli
from iidlab.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from iidlab.imaging import read_image
from iidlab.synthgen import read_manifest


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A root with a generated dataset and a tiny trained pipeline run."""
    root = tmp_path_factory.mktemp("ws")
    assert main(["gen", "--root", str(root), "--out", "data", "--n", "24", "--resolution", "32",
                 "--clip-probability", "0.5", "--seed", "5"]) == EXIT_OK
    for stage in ("chroma", "albedo", "diffuse"):
        code = main(["train", "--root", str(root), "--manifest", "data/manifest.txt", "--stage", stage,
                     "--iterations", "3", "--batch-size", "4", "--widths", "4,8,8", "--out", "pipe"])
        assert code == EXIT_OK
    return root


def test_help_exits_zero():
    proc = subprocess.run([sys.executable, "-m", "iidlab.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in cli.COMMANDS:
        assert command in proc.stdout


@pytest.mark.parametrize("argv", [
    [],
    ["nope"],
    ["gen"],
    ["gen", "--out", "d", "--n", "0"],
    ["train"],
    ["edit", "--out", "x.png"],
    ["decompose", "--out", "x", "--mode", "bogus"],
    ["ablate", "--out", "x", "--manifest", "m", "--seeds", "a,b"],
])
def test_usage_errors(argv, tmp_path, capsys):
    if argv and argv[0] == "ablate":
        argv = argv + ["--root", str(tmp_path)]
    assert main(argv) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_gen_writes_manifest(workspace):
    entries = read_manifest(workspace / "data" / "manifest.txt")
    assert len(entries) == 24
    assert {e.split for e in entries} <= {"train", "val", "test"}


def test_gen_config_file(tmp_path):
    (tmp_path / "scene.cfg").write_text("resolution = 32\nn = 3\n")
    assert main(["gen", "--root", str(tmp_path), "--config", "scene.cfg", "--out", "d"]) == EXIT_OK
    assert len(read_manifest(tmp_path / "d" / "manifest.txt")) == 3
    (tmp_path / "bad.cfg").write_text("colour = 1\n")
    assert main(["gen", "--root", str(tmp_path), "--config", "bad.cfg", "--out", "e"]) == EXIT_USAGE


def test_train_run_layout(workspace):
    run = workspace / "runs" / "pipe"
    assert (run / "config").exists()
    for stage in ("chroma", "albedo", "diffuse"):
        assert (run / "checkpoints" / f"{stage}.iidc").exists()
    stages = {line.split(",")[0] for line in (run / "curves.csv").read_text().splitlines()[1:]}
    assert stages == {"chroma", "albedo", "diffuse"}
    assert any((run / "samples").iterdir())


def test_train_config_file(workspace):
    (workspace / "t.cfg").write_text("manifest = data/manifest.txt\nstage = chroma\niterations = 2\n"
                                     "widths = 4,8,8\nbatch_size = 2\n")
    assert main(["train", "--root", str(workspace), "--config", "t.cfg", "--out", "cfgrun"]) == EXIT_OK
    assert "iterations = 2" in (workspace / "runs" / "cfgrun" / "config").read_text()


def test_train_missing_manifest_is_data_error(tmp_path):
    assert main(["train", "--root", str(tmp_path), "--manifest", "none.csv"]) == EXIT_DATA


def test_train_nan_is_numeric_failure(workspace, monkeypatch):
    from iidlab.pipeline import estimator

    def boom(self, *a, **k):
        raise estimator.NumericalError("loss is nan", [0])

    monkeypatch.setattr(estimator.StageEstimator, "fit", boom)
    code = main(["train", "--root", str(workspace), "--manifest", "data/manifest.txt",
                 "--iterations", "1", "--widths", "4,8,8", "--out", "nanrun"])
    assert code == EXIT_NUMERIC
    assert "batch seeds" in (workspace / "runs" / "nanrun" / "nan_dump.txt").read_text()


def test_decompose_eval_edit_chain(workspace, capsys):
    r = str(workspace)
    assert main(["decompose", "--root", r, "--run", "runs/pipe", "--manifest", "data/manifest.txt",
                 "--split", "train", "--out", "pred"]) == EXIT_OK
    assert main(["eval", "--root", r, "--manifest", "data/manifest.txt", "--components", "pred",
                 "--split", "train", "--out", "report"]) == EXIT_OK
    assert any((workspace / "report").iterdir())
    scene_dir = next(p for p in (workspace / "pred").iterdir() if p.is_dir())
    rel = scene_dir.relative_to(workspace)
    for op in ("despecularize", "whitebalance", "recover_highlights"):
        assert main(["edit", "--root", r, "--components", str(rel), "--op", op,
                     "--out", f"edits/{op}.png"]) == EXIT_OK
        assert read_image(workspace / "edits" / f"{op}.png").channels == 3


def test_decompose_single_image(workspace):
    scene_dir = workspace / "data" / "scene_00000"
    image, albedo = "image.iidf", "albedo.iidf"
    rel = scene_dir.relative_to(workspace)
    r = str(workspace)
    assert main(["decompose", "--root", r, "--run", "runs/pipe", "--input", f"{rel}/{image}",
                 "--out", "one"]) == EXIT_USAGE
    assert main(["decompose", "--root", r, "--run", "runs/pipe", "--input", f"{rel}/{image}",
                 "--reference-albedo", f"{rel}/{albedo}", "--out", "one"]) == EXIT_OK
    assert any((workspace / "one").iterdir())


def test_decompose_oracle_and_missing_run(workspace):
    r = str(workspace)
    assert main(["decompose", "--root", r, "--manifest", "data/manifest.txt", "--oracle",
                 "--split", "test", "--out", "gt"]) == EXIT_OK
    assert main(["decompose", "--root", r, "--run", "runs/absent", "--manifest", "data/manifest.txt",
                 "--out", "x"]) == EXIT_DATA


def test_eval_missing_components_is_data_error(workspace):
    assert main(["eval", "--root", str(workspace), "--manifest", "data/manifest.txt",
                 "--components", "nowhere", "--out", "rep"]) == EXIT_DATA


def test_edit_config_and_bad_values(workspace):
    r = str(workspace)
    assert main(["decompose", "--root", r, "--manifest", "data/manifest.txt", "--oracle",
                 "--split", "train", "--out", "gt2"]) == EXIT_OK
    scene = next(p for p in (workspace / "gt2").iterdir()).relative_to(workspace)
    (workspace / "edit.cfg").write_text(f"components = {scene}\nop = recover_highlights\nexposure = 0.5\n")
    assert main(["edit", "--root", r, "--config", "edit.cfg", "--out", "e/h.iidf"]) == EXIT_OK
    assert (workspace / "e" / "h_mask.iidf").exists()
    assert main(["edit", "--root", r, "--components", str(scene), "--op", "despecularize",
                 "--exposure", "-1", "--out", "e/x.png"]) == EXIT_USAGE
    (workspace / "bad.cfg").write_text("bogus = 1\n")
    assert main(["edit", "--root", r, "--config", "bad.cfg", "--out", "e/y.png"]) == EXIT_USAGE


def test_gradcheck_pass_and_fail(tmp_path, monkeypatch, capsys):
    assert main(["gradcheck", "--root", str(tmp_path), "--out", "gc.txt"]) == EXIT_OK
    text = (tmp_path / "gc.txt").read_text()
    assert "FAIL" not in text and "conv2d" in text

    from iidlab.nn import gradcheck

    monkeypatch.setattr(gradcheck, "gradcheck_suite", lambda **k: {"conv2d": 0.5, "add": 0.0})
    assert main(["gradcheck"]) == EXIT_NUMERIC
    assert "FAIL conv2d" in capsys.readouterr().out


def test_ablate_writes_tables(workspace, capsys):
    code = main(["ablate", "--root", str(workspace), "--manifest", "data/manifest.txt", "--table", "chroma",
                 "--seeds", "0", "--iterations", "2", "--batch-size", "4", "--widths", "4,8,8", "--out", "abl"])
    assert code == EXIT_OK
    lines = (workspace / "abl" / "ablation_chroma.csv").read_text().splitlines()
    assert lines[0] == "table,variant,seed,albedo_si_rmse"
    assert any(line.startswith("chroma,direct_albedo,mean,") for line in lines)
    out = capsys.readouterr().out
    value = float(out.split("albedo_si_rmse=")[1].split()[0])
    assert np.isfinite(value)
