import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from inforeg_lab.cli import compare, main

TINY = """
dataset:
  generator:
    seed: 0
    num_classes: 3
    n_train: 60
    n_test: 30
    modalities:
      - {name: a, dim: 8, informative_dims: 3, class_separation: 4.0}
      - {name: b, dim: 6, informative_dims: 3, class_separation: 1.5}
model: {hidden: [6]}
train: {method: inforeg, epochs: 4, batch_size: 10, eta: 0.1, K: 0.000001,
        log_gradients: true, store_gradients: true}
sweep: {beta: [0.1, 0.9], seed: [0, 1]}
output: out
"""


@pytest.fixture
def sweep(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    return tmp_path / "out"


def read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sweep_writes_runs_and_manifest(sweep):
    runs = sorted(p for p in sweep.iterdir() if p.is_dir())
    assert len(runs) == 4
    for r in runs:
        assert len(read(r / "metrics.csv")) == 4
    manifest = json.loads((sweep / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1] and len(manifest["runs"]) == 4
    listed = set(manifest["files"])
    on_disk = {str(p.relative_to(sweep)) for p in sweep.rglob("*") if p.is_file() and p.name != "manifest.json"}
    assert listed == on_disk
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((sweep / name).read_bytes()).hexdigest() == digest


def test_rerun_reproduces_every_hash(sweep, tmp_path, monkeypatch):
    monkeypatch.setenv("INFOREG_LAB_OUT", str(tmp_path / "again"))
    monkeypatch.setenv("INFOREG_LAB_WORKERS", "2")
    assert main(["run", str(tmp_path / "tiny.yaml")]) == 0
    a = json.loads((sweep / "manifest.json").read_text())
    b = json.loads((tmp_path / "again" / "manifest.json").read_text())
    diff = {k for k in a["files"] if a["files"][k] != b["files"].get(k)}
    assert diff <= {"config.yaml"}  # records the output directory
    assert a["config_hash"] != "" and a["runs"] == b["runs"]


def test_seed_override(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(TINY)
    assert main(["run", str(cfg), "--seed", "5", "--out", str(tmp_path / "o")]) == 0
    assert sorted(p.name for p in (tmp_path / "o").iterdir() if p.is_dir()) == [
        "inforeg-T4-s5-b0.1-K1e-06", "inforeg-T4-s5-b0.9-K1e-06"]


def test_compare_medians(sweep, tmp_path, capsys):
    table = compare([sweep], tmp_path / "cmp.csv")
    out = capsys.readouterr().out
    assert "median" in out
    runs = [r for r in table if r["seed"] != "median"]
    med = [r for r in table if r["seed"] == "median"]
    assert len(runs) == 4 and [m["run_id"] for m in med] == ["median[inforeg-T4-b0.1-K1e-06]",
                                                             "median[inforeg-T4-b0.9-K1e-06]"]
    for m, beta in zip(med, ("0.1", "0.9")):
        finals = [float(read(sweep / r["run_id"] / "metrics.csv")[-1]["acc_m1"])
                  for r in runs if f"-b{beta}-" in r["run_id"]]
        assert m["acc_m1"] == pytest.approx(float(np.median(finals)))
    assert len(read(tmp_path / "cmp.csv")) == 6


def test_compare_errors(sweep, tmp_path):
    one = next(p for p in sweep.iterdir() if p.is_dir())
    assert main(["compare", str(one)]) == 1
    other = tmp_path / "other.yaml"
    other.write_text(TINY.replace("seed: 0\n    num_classes", "seed: 1\n    num_classes"))
    main(["run", str(other), "--out", str(tmp_path / "o2"), "--seed", "0"])
    two = next(p for p in (tmp_path / "o2").iterdir() if p.is_dir())
    assert main(["compare", str(one), str(two)]) == 1


def test_plotdata_kinds(sweep):
    run = next(p for p in sweep.iterdir() if p.is_dir())
    metrics = read(run / "metrics.csv")
    assert main(["plotdata", str(run), "--kind", "traces"]) == 0
    assert len(read(run / "plot_traces.csv")) == 2 * 4
    assert (run / "plot_traces.png").stat().st_size > 0
    assert main(["plotdata", str(run), "--kind", "accuracy", "--no-render"]) == 0
    acc = read(run / "plot_accuracy.csv")
    for row in acc:
        assert float(row["y"]) == float(metrics[int(row["x"])][row["series"]])
    assert main(["plotdata", str(run), "--kind", "gap"]) == 0
    assert main(["plotdata", str(run), "--kind", "cosine", "--epoch", "2"]) == 0
    assert len(read(run / "plot_cosine.csv")) == 6 * 6


def test_cosine_without_gradients_names_flag(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(TINY.replace("store_gradients: true", "store_gradients: false"))
    main(["run", str(cfg), "--out", str(tmp_path / "o"), "--seed", "0"])
    run = next(p for p in (tmp_path / "o").iterdir() if p.is_dir())
    assert main(["plotdata", str(run), "--kind", "cosine"]) == 1
    assert "store_gradients" in capsys.readouterr().err


@pytest.mark.parametrize("check", ["orthogonality", "equivalence", "descent"])
def test_diagnose(sweep, check):
    run = next(p for p in sweep.iterdir() if p.is_dir())
    assert main(["diagnose", str(run), "--check", check]) == 0
    report = json.loads((run / f"diagnose_{check}.json").read_text())
    assert report["passed"] is True


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {epochs: 2}\n")
    assert main(["run", str(bad)]) == 2
    csvcfg = tmp_path / "csv.yaml"
    (tmp_path / "a.csv").write_text("f0,label\n1.0,0\nnope,1\n")
    csvcfg.write_text("dataset: {csv: {train: [a.csv, a.csv], test: [a.csv, a.csv]}}\n"
                      "train: {batch_size: 1, epochs: 1}\n")
    assert main(["run", str(csvcfg), "--out", str(tmp_path / "o")]) == 3
    diverge = tmp_path / "div.yaml"
    diverge.write_text(TINY.replace("eta: 0.1", "eta: 1.0e12"))
    with pytest.warns(RuntimeWarning):
        assert main(["run", str(diverge), "--out", str(tmp_path / "o3")]) == 4
