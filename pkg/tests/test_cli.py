from __future__ import annotations

import json

import numpy as np
import pytest

from spectramill.cli import DEFAULTS, EXIT_CONFIG, EXIT_DIGEST, EXIT_IO, main, sha256_file
from spectramill.nn.checkpoint import Checkpoint
from spectramill.nn.model import build_model
from spectramill.nn.spec import preset
from spectramill.toys import bundled_models


def run(*argv):
    return main([str(a) for a in argv])


def test_gen_is_reproducible(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert run("gen", "--task", "denoiser", "--n", 20, "--seed", 1, "--length", 64, "--out", a) == 0
    assert run("gen", "--task", "denoiser", "--n", 20, "--seed", 1, "--length", 64, "--out", b) == 0
    assert sha256_file(a) == sha256_file(b)
    manifest = json.loads((tmp_path / "a.txt.manifest.json").read_text())
    assert manifest["command"] == "gen" and manifest["config"]["seed"] == 1
    assert manifest["outputs"][str(a)] == sha256_file(a)


def test_seed_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("SPECTRAMILL_SEED", "7")
    out = tmp_path / "d.txt"
    assert run("gen", "--n", 2, "--length", 32, "--out", out) == 0
    assert json.loads((tmp_path / "d.txt.manifest.json").read_text())["config"]["seed"] == 7


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gen": {"n": 3, "length": 32, "seed": 4}}))
    out = tmp_path / "d.txt"
    assert run("gen", "--config", cfg, "--seed", 5, "--out", out) == 0
    resolved = json.loads((tmp_path / "d.txt.manifest.json").read_text())["config"]
    assert resolved["n"] == 3 and resolved["seed"] == 5


def test_print_config(capsys):
    assert run("print-config", "train") == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["train"]["viper"]["alpha"] == 1.0
    assert printed["train"] == DEFAULTS["train"]


def test_train_inspect_and_resume(tmp_path, capsys):
    data = tmp_path / "d.txt"
    run("gen", "--task", "denoiser", "--n", 8, "--length", 32, "--out", data)
    cp = tmp_path / "m.smll"
    argv = ["train", "--data", data, "--out", cp, "--epochs", 1, "--max-filters", 3, "--deterministic"]
    assert run(*argv) == 0
    assert (tmp_path / "m.metrics.csv").is_file()
    capsys.readouterr()
    assert run("inspect-checkpoint", cp) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["parameters"] == build_model(preset("denoiser").capped(3)).n_parameters()
    assert run(*argv[:-1], "--resume", cp) == 0
    assert run(*argv[:-3], "--max-filters", 2, "--resume", cp) == EXIT_DIGEST


def test_deterministic_training_is_bit_identical(tmp_path):
    data = tmp_path / "d.txt"
    run("gen", "--task", "denoiser", "--n", 8, "--length", 32, "--out", data)
    for name in ("a.smll", "b.smll"):
        assert run("train", "--data", data, "--out", tmp_path / name, "--epochs", 2, "--max-filters", 3,
                   "--deterministic") == 0
    assert sha256_file(tmp_path / "a.smll") == sha256_file(tmp_path / "b.smll")


def test_exit_codes(tmp_path):
    assert run("inspect-checkpoint", tmp_path / "missing.smll") == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("gen", "--config", bad, "--out", tmp_path / "x") == EXIT_CONFIG
    bad.write_text(json.dumps({"gen": {"bogus": 1}}))
    assert run("gen", "--config", bad, "--out", tmp_path / "x") == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        run("gen", "--no-such-flag")
    assert info.value.code == 2


def three_peak_csv(path, length=128):
    x = np.arange(length, dtype=np.float64)
    y = 0.002 * x + 0.1
    for c, a, w in ((25, 1.0, 3.0), (64, 0.7, 4.0), (100, 0.5, 3.5)):
        y += a * np.exp(-4 * np.log(2) * ((x - c) / w) ** 2)
    axis = 300.0 + 2.0 * x
    path.write_text("axis,intensity\n" + "\n".join(f"{a:.17g},{v:.17g}" for a, v in zip(axis, y)))
    return axis[[25, 64, 100]]


def test_run_with_bundled_models(tmp_path):
    csv_path = tmp_path / "s.csv"
    centers = three_peak_csv(csv_path)
    out = tmp_path / "report.json"
    assert run("run", "--input", csv_path, "--models", bundled_models(), "--out", out,
               "--plot", tmp_path / "stages.svg") == 0
    report = json.loads(out.read_text())
    positions = [p["position"] for p in report["peaks"]]
    assert len(positions) == 3
    assert np.all(np.abs(np.array(positions) - centers) <= 2.0)
    assert (tmp_path / "stages.svg").read_text().startswith("<?xml")
    assert (tmp_path / "report.json.manifest.json").is_file()


def test_compare(tmp_path, capsys):
    report = tmp_path / "r.json"
    report.write_text(json.dumps({"peaks": [{"position": 1000.0, "intensity": 137.6, "fwhm": 10.0}]}))
    ann = tmp_path / "a.csv"
    ann.write_text("position,intensity,fwhm\n1000.5,156.0,10.0\n")
    assert run("compare", "--report", report, "--annotation", ann, "--out", tmp_path / "c.csv") == 0
    assert "intensity 0.118" in capsys.readouterr().out


def test_sweep_command(tmp_path):
    data = tmp_path / "d.txt"
    run("gen", "--task", "peak_locator", "--n", 6, "--length", 64, "--out", data)
    cp = tmp_path / "loc.smll"
    Checkpoint.from_model(build_model(preset("peak_locator").capped(2)), {}).save(cp)
    out = tmp_path / "grid.csv"
    assert run("sweep", "--model", cp, "--data", data, "--out", out, "--plot", tmp_path / "g.svg") == 0
    assert len(out.read_text().splitlines()) == 10
