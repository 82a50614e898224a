"""Command-line experiment runner.

    inforeg-lab run CONFIG [--seed S] [--out DIR] [--workers N]
    inforeg-lab compare RUN_DIR [RUN_DIR ...] [--csv PATH]
    inforeg-lab plotdata RUN_DIR --kind {traces,accuracy,cosine,gap} [--no-render]
    inforeg-lab diagnose RUN_DIR --check {orthogonality,equivalence,descent}

Exit codes: 0 ok, 1 failed check or bad input, 2 config error,
3 ingestion error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .diagnostics import (descent_check, gradient_orthogonality, orthogonality_mc, penalty_equivalence,
                          read_log)
from .errors import InputError, LabError
from .fisher import batch_cosine_matrix
from .numerics import make_rng
from .trainer import train, write_run

log = logging.getLogger("inforeg_lab")

ENV_OUT = "INFOREG_LAB_OUT"
ENV_WORKERS = "INFOREG_LAB_WORKERS"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_one(args):
    cfg, tc, out_dir, base_dir = args
    train_ds, test_ds = cfgmod.build_datasets(cfg, base_dir)
    result = train(tc, train_ds, test_ds)
    files = write_run(result, Path(out_dir) / tc.run_id)
    return tc.run_id, [str(f) for f in files]


def run_experiment(config_path, seed=None, out=None, workers=None) -> Path:
    config_path = cfgmod.resolve(config_path)
    cfg = cfgmod.load(config_path)
    out = out or os.environ.get(ENV_OUT)
    cfg = cfgmod.with_overrides(cfg, seed=seed, out=out)
    workers = int(workers or os.environ.get(ENV_WORKERS) or 1)
    runs = cfgmod.expand(cfg)
    out_dir = Path(cfg["output"])
    base_dir = Path(config_path).resolve().parent
    log.info("%d run(s) in sweep, writing to %s", len(runs), out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(cfgmod.dump(cfg))
    jobs = [(cfg, tc, out_dir, base_dir) for tc in runs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            done = list(pool.map(_run_one, jobs))
    else:
        done = [_run_one(j) for j in jobs]
    for run_id, _ in done:
        log.info("finished %s", run_id)
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_hash": cfgmod.config_hash(cfg),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "versions": {"inforeg_lab": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "seeds": sorted({tc.seed for tc in runs}),
        "runs": [tc.run_id for tc in runs],
        "files": {str(p.relative_to(out_dir)): _sha256(p) for p in files},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir


def _run_dirs(dirs) -> list[Path]:
    out = []
    for d in map(Path, dirs):
        if (d / "metrics.csv").exists():
            out.append(d)
        elif (d / "manifest.json").exists():
            out.extend(sorted(p.parent for p in d.glob("*/metrics.csv")))
        else:
            raise InputError(f"{d} is neither a run directory nor an experiment output directory")
    return out


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def compare(dirs, csv_path=None, stream=None) -> list[dict]:
    stream = stream or sys.stdout
    runs = _run_dirs(dirs)
    if len(runs) < 2:
        raise InputError("compare needs at least two completed runs")
    metas = [json.loads((d / "run.json").read_text()) for d in runs]
    ids = {m["dataset_id"] for m in metas}
    if len(ids) > 1:
        raise InputError(f"runs were trained on different datasets: {sorted(ids)}")
    table = []
    for d, meta in zip(runs, metas):
        last = _read_csv(d / "metrics.csv")[-1]
        row = {"run_id": meta["run_id"], "method": meta["method"], "epochs": int(last["epoch"]) + 1,
               "seed": str(meta["seed"]), "overall_acc": float(last["overall_acc"])}
        for k in sorted(last):
            if k.startswith("acc_m"):
                row[k] = float(last[k])
        table.append(row)
    acc_cols = [k for k in table[0] if k.startswith("acc_m")]
    # medians over seeds, one per configuration (the run id with its seed removed)
    groups = {}
    for r, meta in zip(table, metas):
        groups.setdefault(re.sub(rf"-s{meta['seed']}(?=-|$)", "", r["run_id"], count=1), []).append(r)
    for key, rs in groups.items():
        med = {"run_id": f"median[{key}]", "method": rs[0]["method"], "epochs": rs[0]["epochs"], "seed": "median"}
        for k in ["overall_acc"] + acc_cols:
            med[k] = float(np.median([r[k] for r in rs]))
        table.append(med)
    cols = ["run_id", "method", "epochs", "seed", "overall_acc"] + acc_cols
    widths = {c: max(len(c), *(len(_cell(r[c])) for r in table)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols), file=stream)
    for r in table:
        print("  ".join(_cell(r[c]).ljust(widths[c]) for c in cols), file=stream)
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            w.writerows({c: r[c] for c in cols} for r in table)
    return table


def _cell(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def plotdata(run_dir, kind: str, out=None, render: bool = True, epoch=None, modality: int = 0, pair=(0, 1)):
    """Write a tidy (series, x, y) CSV for one figure kind; render a PNG next to it."""
    from . import plotting

    run_dir = Path(run_dir)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise InputError(f"{run_dir} has no metrics.csv")
    metrics = _read_csv(metrics_path)
    M = sum(1 for k in metrics[0] if k.startswith("acc_m"))
    rows, windows = [], [int(r["epoch"]) for r in metrics if r.get(f"window_m{modality}") == "1"]
    if kind == "traces":
        rows = [{"series": f"trace_m{m}", "x": int(r["epoch"]), "y": float(r[f"trace_m{m}"])}
                for m in range(M) for r in metrics]
    elif kind == "accuracy":
        cols = ["overall_acc"] + [f"acc_m{m}" for m in range(M)]
        rows = [{"series": c, "x": int(r["epoch"]), "y": float(r[c])} for c in cols for r in metrics]
    elif kind == "gap":
        a, b = pair
        rows = [{"series": f"gap_m{a}_m{b}", "x": int(r["epoch"]),
                 "y": float(r[f"trace_m{a}"]) - float(r[f"trace_m{b}"])} for r in metrics]
    elif kind == "cosine":
        npz = run_dir / "grads.npz"
        if not npz.exists():
            raise InputError(f"{run_dir} has no stored gradients; rerun with 'train.store_gradients: true'")
        data = np.load(npz)
        if epoch is None:
            epoch = windows[0] if windows else int(metrics[min(2, len(metrics) - 1)]["epoch"])
        key = f"e{epoch}_m{modality}"
        if key not in data:
            raise InputError(f"no stored gradients for epoch {epoch}, modality {modality}")
        C = batch_cosine_matrix(list(data[key]))
        rows = [{"series": f"row{i}", "x": j, "y": "" if np.isnan(C[i, j]) else float(C[i, j])}
                for i in range(C.shape[0]) for j in range(C.shape[1])]
    else:
        raise InputError(f"unknown plot kind {kind!r}")
    out = Path(out) if out else run_dir / f"plot_{kind}.csv"
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["series", "x", "y"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({"series": r["series"], "x": r["x"], "y": r["y"] if r["y"] == "" else repr(r["y"])})
    if render:
        png = out.with_suffix(".png")
        if kind == "cosine":
            plotting.render_heatmap(C, png, f"Batch-gradient cosine, epoch {epoch}, m{modality}")
        else:
            plotting.render_series(rows, png, kind, windows)
    return out


def _run_meta(run_dir: Path) -> dict:
    p = run_dir / "run.json"
    return json.loads(p.read_text()) if p.exists() else {}


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (float, np.floating)):
        return float(o) if np.isfinite(o) else None
    if isinstance(o, np.integer):
        return int(o)
    return o


def diagnose(run_dir, check: str, out=None, pairs: int = 10_000, seed: int = 0) -> tuple[bool, dict]:
    run_dir = Path(run_dir)
    if check == "orthogonality":
        rng = make_rng(seed, "mc")
        reps = {n: orthogonality_mc(n, pairs if n <= 1000 else max(100, pairs // 100), rng).to_dict()
                for n in (2, 100, 1000, 10_000)}
        report = {"check": check, "sphere": reps}
        npz = run_dir / "grads.npz"
        if npz.exists():
            data = np.load(npz)
            report["gradients"] = {k: gradient_orthogonality(list(data[k])) for k in data.files if len(data[k]) > 1}
        means = [reps[n]["mean_abs_cos"] for n in (100, 1000, 10_000)]
        ok = means[0] > means[1] > means[2]
    elif check == "equivalence":
        gl = read_log(run_dir / "gradlog.csv")
        opt = _run_meta(run_dir).get("optimizer", "sgd")
        shadow, total = penalty_equivalence(gl, "shadow", opt), penalty_equivalence(gl, "total", opt)
        report = {"check": check, "shadow": shadow.summary(), "total": total.summary()}
        ok = shadow.max_identity_rel_err <= 1e-9 and total.max_identity_rel_err <= 1e-9
        with (run_dir / "diagnose_equivalence.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "batch", "modality", "in_window", "exact", "approximation", "cross",
                        "identity_rel_err", "cross_ratio"])
            for r in shadow.records:
                w.writerow([r.epoch, r.batch, r.modality, int(r.in_window), repr(r.exact), repr(r.approximation),
                            repr(r.cross), repr(r.identity_rel_err), repr(r.cross_ratio)])
    elif check == "descent":
        gl = read_log(run_dir / "gradlog.csv")
        dpath = run_dir / "descent.csv"
        rep = descent_check(gl, read_log(dpath) if dpath.exists() else None)
        report = {"check": check, **rep.summary()}
        ok = rep.bound_holds
    else:
        raise InputError(f"unknown check {check!r}")
    report = _jsonable(report)
    report["passed"] = bool(ok)
    out = Path(out) if out else run_dir / f"diagnose_{check}.json"
    out.write_text(json.dumps(report, indent=2, sort_keys=True, default=str, allow_nan=False) + "\n")
    return ok, report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inforeg-lab", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run every configuration in a config file")
    r.add_argument("config", help="YAML config path or bundled preset name")
    r.add_argument("--seed", type=int, help="train seed; replaces any seed sweep")
    r.add_argument("--out", help=f"output directory (env {ENV_OUT})")
    r.add_argument("--workers", type=int, help=f"parallel runs (env {ENV_WORKERS}, default 1)")

    c = sub.add_parser("compare", help="final-epoch metrics side by side")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--csv", help="also write the table here")

    d = sub.add_parser("plotdata", help="tidy CSV (+ PNG) for one figure")
    d.add_argument("dir")
    d.add_argument("--kind", required=True, choices=["traces", "accuracy", "cosine", "gap"])
    d.add_argument("--out")
    d.add_argument("--epoch", type=int)
    d.add_argument("--modality", type=int, default=0)
    d.add_argument("--pair", type=int, nargs=2, default=(0, 1), metavar=("M1", "M2"))
    d.add_argument("--no-render", action="store_true", help="CSV only, skip the PNG")

    g = sub.add_parser("diagnose", help="numerical checks on a logged run")
    g.add_argument("dir")
    g.add_argument("--check", required=True, choices=["orthogonality", "equivalence", "descent"])
    g.add_argument("--out")
    g.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            out = run_experiment(args.config, args.seed, args.out, args.workers)
            print(out)
        elif args.command == "compare":
            compare(args.dirs, args.csv)
        elif args.command == "plotdata":
            print(plotdata(args.dir, args.kind, args.out, not args.no_render, args.epoch, args.modality,
                           tuple(args.pair)))
        elif args.command == "diagnose":
            ok, report = diagnose(args.dir, args.check, args.out, seed=args.seed)
            print(json.dumps(report, indent=2, sort_keys=True, default=str))
            return 0 if ok else 1
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
