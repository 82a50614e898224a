"""Training loop for joint training and regulated training, with or without
unimodal auxiliary losses.

Epoch structure: run every batch (forward, backward, record the encoder
gradient norms, optionally add the proximal gradient, SGD step), then evaluate,
finalize the epoch's traces, and snapshot the encoder weights for the next
epoch's proximal anchor. Plain SGD with a constant learning rate only.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .datagen import MultimodalDataset, batches
from .errors import ConfigError, ContractError, InputError, NumericError
from .fisher import EpochTraceAccumulator, FisherHistory, write_traces_csv
from .inforeg import RegulationConfig, SnapshotStore, decide, modality_score, regulation_grad, window_flags
from .model import FUSIONS, ModelParams, backward, evaluate, forward, init_params, save_checkpoint

METHODS = ("joint", "joint_unimodal", "inforeg", "inforeg_unimodal")


@dataclass
class TrainConfig:
    method: str = "joint"
    epochs: int = 20
    batch_size: int = 32
    eta: float = 0.05
    unimodal_loss_weight: float | None = None  # None -> 0 for plain methods, 1 for *_unimodal
    regulation: RegulationConfig = field(default_factory=RegulationConfig)
    seed: int = 0
    hidden: tuple[int, ...] = (32, 32)
    fusion: str = "concat"
    log_gradients: bool = False
    store_gradients: bool = False
    log_descent: bool = False
    run_id: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ConfigError(f"eta must be a finite positive number, got {self.eta!r}")
        unimodal = self.method.endswith("_unimodal")
        if self.unimodal_loss_weight is None:
            self.unimodal_loss_weight = 1.0 if unimodal else 0.0
        if unimodal and not self.unimodal_loss_weight > 0:
            raise ConfigError(f"method {self.method} needs unimodal_loss_weight > 0")
        if not unimodal and self.unimodal_loss_weight != 0:
            raise ConfigError(f"method {self.method} takes no unimodal loss (weight {self.unimodal_loss_weight})")
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"hidden widths must be positive, got {self.hidden!r}")
        if not self.run_id:
            self.run_id = default_run_id(self)

    @property
    def regulated(self) -> bool:
        return self.method.startswith("inforeg")


def default_run_id(cfg: TrainConfig) -> str:
    rid = f"{cfg.method}-T{cfg.epochs}-s{cfg.seed}"
    if cfg.regulated:
        rid += f"-b{cfg.regulation.beta:g}-K{cfg.regulation.K:g}"
    return re.sub(r"[^A-Za-z0-9_.+-]", "_", rid)


@dataclass
class RunResult:
    config: TrainConfig
    names: list[str]
    rows: list[dict]
    history: FisherHistory
    decisions: list[dict]
    gradlog: list[dict]
    descent: list[dict]
    params: ModelParams
    stored_grads: dict  # (epoch, modality) -> list of flat grads
    dataset_id: str

    @property
    def run_id(self) -> str:
        return self.config.run_id


def sgd_step(params: ModelParams, grads, eta: float) -> None:
    ps, gs = params.all_arrays(), grads.all_arrays()
    if len(ps) != len(gs):
        raise ContractError(f"{len(gs)} gradient tensors for {len(ps)} parameter tensors")
    for p, g in zip(ps, gs):
        if p.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        p -= eta * g
    params.version += 1


def evaluate_epoch(params: ModelParams, ds: MultimodalDataset) -> dict:
    if len(ds) == 0:
        raise InputError("test set is empty")
    overall, per = evaluate(params, ds)
    row = {"overall_acc": overall}
    for m, a in enumerate(per):
        row[f"acc_m{m}"] = a
    return row


def metric_columns(M: int) -> list[str]:
    cols = ["run_id", "epoch", "method", "overall_acc"]
    for prefix in ("acc", "trace", "window", "mean_alpha"):
        cols += [f"{prefix}_m{m}" for m in range(M)]
    cols.append("joint_loss")
    for prefix in ("unimodal_loss", "penalty"):
        cols += [f"{prefix}_m{m}" for m in range(M)]
    return cols


DECISION_COLUMNS = ["epoch", "batch", "modality", "score", "delta", "alpha", "in_window", "active"]


def _objective(params, xs, y, uw, alphas, snap):
    """Task loss plus active penalties, and the full flat gradient."""
    logits, tr = forward(params, xs)
    parts, g = backward(params, tr, y, uw)
    loss = parts.total
    for m, a in alphas.items():
        pen, pg = regulation_grad(params.encoder_flat(m), snap.get(m), a)
        loss += pen
        nx.unflatten_into(g.encoders[m], nx.flatten(g.encoders[m]) + pg)
    return loss, nx.flatten(g.all_arrays())


def _shifted(params: ModelParams, delta: np.ndarray) -> ModelParams:
    p = params.copy()
    flat = nx.flatten(p.all_arrays()) + delta
    nx.unflatten_into(p.all_arrays(), flat)
    return p


def train(config: TrainConfig, train_ds: MultimodalDataset, test_ds: MultimodalDataset) -> RunResult:
    if train_ds.num_modalities < 2:
        raise ConfigError("multimodal training needs at least two modalities")
    if config.batch_size > len(train_ds):
        raise ConfigError(f"batch_size {config.batch_size} exceeds training set size {len(train_ds)}")
    M, eta, uw, reg = train_ds.num_modalities, config.eta, config.unimodal_loss_weight, config.regulation
    params = init_params(train_ds.dims, config.hidden, train_ds.num_classes, config.fusion,
                         nx.make_rng(config.seed, "init"))
    shuffle_rng = nx.make_rng(config.seed, "shuffle")
    history = FisherHistory(M)
    snap = SnapshotStore()
    snap.take(params)
    rows, decisions, gradlog, descent, stored = [], [], [], [], {}

    for t in range(config.epochs):
        # flags are reported for every method, but only consulted when regulating
        flags = window_flags(history, reg, t)
        acc = EpochTraceAccumulator(M, store_gradients=config.store_gradients)
        joint_sum, uni_sum = 0.0, np.zeros(M)
        alpha_sum, pen_sum = np.zeros(M), np.zeros(M)
        if config.log_gradients:
            shadow = [snap.get(m).copy() for m in range(M)]
            run_sum = [np.zeros_like(shadow[m]) for m in range(M)]
            run_applied = [np.zeros_like(shadow[m]) for m in range(M)]
            diag, cross = np.zeros(M), np.zeros(M)
            adiag, across = np.zeros(M), np.zeros(M)
            g_task_max, g_applied_max = np.zeros(M), np.zeros(M)
        epoch_batches = batches(len(train_ds), config.batch_size, shuffle_rng)
        for b, idx in enumerate(epoch_batches):
            xs, y = train_ds.take(idx), train_ds.labels[idx]
            logits, trace = forward(params, xs)
            parts, grads = backward(params, trace, y, uw)
            if not math.isfinite(parts.total):
                raise NumericError(f"{config.run_id}: non-finite loss at epoch {t}, batch {b}")
            acc.record(grads)
            task_flat = list(grads.flat)
            joint_sum += parts.joint
            uni_sum += parts.unimodal

            dec = None
            if config.regulated:
                if t >= reg.warmup_epochs:
                    scores = [modality_score(params, trace.features, y, m) for m in range(M)]
                    dec = decide(flags, scores, reg, t)
                for m in range(M):
                    decisions.append(_decision_row(t, b, m, dec))

            alphas = {m: dec.alphas[m] for m in range(M) if dec is not None and dec.active[m]}
            reg_grads = {}
            for m, a in alphas.items():
                pen, pg = regulation_grad(params.encoder_flat(m), snap.get(m), a)
                reg_grads[m] = pg
                nx.unflatten_into(grads.encoders[m], task_flat[m] + pg)
                alpha_sum[m] += a
                pen_sum[m] += pen

            if config.log_descent:
                w_before = params.copy()
                loss_before, full_grad = _objective(params, xs, y, uw, alphas, snap)

            if config.log_gradients:
                applied = [task_flat[m] + reg_grads[m] if m in reg_grads else task_flat[m] for m in range(M)]
                pre = {m: (params.encoder_flat(m), float(np.sqrt(nx.norm_sq(reg_grads[m]))) if m in reg_grads else 0.0,
                           float(np.dot(reg_grads[m], task_flat[m])) if m in reg_grads else 0.0)
                       for m in range(M)}
                applied_bound_G = g_applied_max.copy()  # max over k < b
                for m in range(M):
                    cross[m] += float(np.dot(task_flat[m], run_sum[m]))
                    across[m] += float(np.dot(applied[m], run_applied[m]))

            sgd_step(params, grads, eta)

            if config.log_gradients:
                for m in range(M):
                    shadow[m] -= eta * task_flat[m]
                    run_sum[m] += task_flat[m]
                    run_applied[m] += applied[m]
                    tsq, asq = nx.norm_sq(task_flat[m]), nx.norm_sq(applied[m])
                    diag[m] += tsq
                    adiag[m] += asq
                    g_task_max[m] = max(g_task_max[m], math.sqrt(tsq))
                    g_applied_max[m] = max(g_applied_max[m], math.sqrt(asq))
                    a = dec.alphas[m] if dec is not None else float("nan")
                    gradlog.append({
                        "epoch": t, "batch": b, "modality": m,
                        "alpha": a, "active": int(m in alphas),
                        "in_window": "" if flags is None else int(flags[m]),
                        "task_sq": tsq, "applied_sq": asq,
                        "shadow_disp_sq": nx.norm_sq(shadow[m] - snap.get(m)),
                        "actual_disp_sq": nx.norm_sq(params.encoder_flat(m) - snap.get(m)),
                        "sum_sq": nx.norm_sq(eta * run_sum[m]),
                        "applied_sum_sq": nx.norm_sq(eta * run_applied[m]),
                        "diag": diag[m], "cross": cross[m],
                        "applied_diag": adiag[m], "applied_cross": across[m],
                        "G_task": g_task_max[m], "G_applied_prev": applied_bound_G[m],
                        "reg_grad_norm": pre[m][1],
                        "ideal_reg_grad_norm": (alphas[m] * eta ** 2 * math.sqrt(nx.norm_sq(run_sum[m]))
                                                if m in alphas else 0.0),
                        "reg_dot_task": pre[m][2],
                        "eta": eta,
                    })

            if config.log_descent:
                loss_after, _ = _objective(params, xs, y, uw, alphas, snap)
                gsq = nx.norm_sq(full_grad)
                gn = math.sqrt(gsq)
                curv = 0.0
                if gn > 0:
                    u = -full_grad / gn
                    h = 1e-5
                    _, gp = _objective(_shifted(w_before, h * u), xs, y, uw, alphas, snap)
                    _, gm = _objective(_shifted(w_before, -h * u), xs, y, uw, alphas, snap)
                    curv = float(np.dot(u, gp - gm)) / (2 * h)
                descent.append({
                    "epoch": t, "batch": b, "regulated": int(bool(alphas)),
                    "loss_before": loss_before, "loss_after": loss_after, "grad_sq": gsq,
                    "curvature": curv, "eta": eta,
                })

        if config.store_gradients:
            for m in range(M):
                stored[(t, m)] = acc.stored[m]
        nb = len(epoch_batches)
        row = {"run_id": config.run_id, "epoch": t, "method": config.method}
        row.update(evaluate_epoch(params, test_ds))
        values = acc.finalize()
        history.append(values, flags)
        for m in range(M):
            row[f"trace_m{m}"] = values[m]
            row[f"window_m{m}"] = "" if flags is None else int(flags[m])
            row[f"mean_alpha_m{m}"] = alpha_sum[m] / nb
            row[f"unimodal_loss_m{m}"] = uni_sum[m] / nb
            row[f"penalty_m{m}"] = pen_sum[m] / nb
        row["joint_loss"] = joint_sum / nb
        rows.append(row)
        snap.take(params)

    return RunResult(config, list(train_ds.names), rows, history, decisions, gradlog, descent, params, stored,
                     train_ds.fingerprint())


def _decision_row(t, b, m, dec) -> dict:
    if dec is None:
        return {"epoch": t, "batch": b, "modality": m, "score": "", "delta": "", "alpha": "",
                "in_window": "", "active": 0}
    return {"epoch": t, "batch": b, "modality": m, "score": dec.scores[m], "delta": dec.deltas[m],
            "alpha": dec.alphas[m], "in_window": int(dec.in_window[m]), "active": int(dec.active[m])}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_run(result: RunResult, run_dir) -> list[Path]:
    """Persist a run; returns the files written."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    M = result.history.num_modalities
    out = []
    p = run_dir / "metrics.csv"
    write_csv(p, metric_columns(M), result.rows)
    out.append(p)
    p = run_dir / "traces.csv"
    write_traces_csv(result.history, p, [f"m{m}" for m in range(M)])
    out.append(p)
    if result.config.regulated:
        p = run_dir / "decisions.csv"
        write_csv(p, DECISION_COLUMNS, result.decisions)
        out.append(p)
    if result.gradlog:
        p = run_dir / "gradlog.csv"
        write_csv(p, list(result.gradlog[0]), result.gradlog)
        out.append(p)
    if result.descent:
        p = run_dir / "descent.csv"
        write_csv(p, list(result.descent[0]), result.descent)
        out.append(p)
    if result.stored_grads:
        p = run_dir / "grads.npz"
        arrays = {f"e{t}_m{m}": np.stack(gs) for (t, m), gs in result.stored_grads.items() if gs}
        np.savez(p, **arrays)
        out.append(p)
    p = run_dir / "checkpoint.json"
    save_checkpoint(result.params, p)
    out.append(p)
    cfg = asdict(result.config)
    cfg["hidden"] = list(cfg["hidden"])
    if math.isinf(cfg["regulation"]["K"]):
        cfg["regulation"]["K"] = "inf"
    meta = {"run_id": result.run_id, "method": result.config.method, "seed": result.config.seed,
            "optimizer": "sgd",
            "dataset_id": result.dataset_id, "modalities": result.names, "config": cfg,
            "files": {"gradients_logged": bool(result.gradlog), "gradients_stored": bool(result.stored_grads),
                      "descent_logged": bool(result.descent)}}
    p = run_dir / "run.json"
    p.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    out.append(p)
    return out


def _json_default(o):
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o))
