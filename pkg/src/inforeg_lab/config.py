"""Experiment configuration: a YAML tree with dataset, model, train, sweep and
output sections.

::

    dataset:
      generator:            # or: csv: {train: [a.csv, b.csv], test: [...]}
        seed: 0
        num_classes: 4
        n_train: 2000
        n_test: 2000
        modalities:
          - {name: strong, dim: 512, informative_dims: 8, class_separation: 8.0, noise_sigma: 1.0}
          - {name: weak,   dim: 512, informative_dims: 8, class_separation: 6.0, noise_sigma: 1.0}
    model: {hidden: [32, 32], fusion: concat}
    train: {method: inforeg, epochs: 15, batch_size: 20, eta: 0.005, seed: 0, beta: 0.9, K: 0.04}
    sweep: {seed: [0, 1, 2], method: [joint, inforeg]}
    output: runs/strong_weak

Unknown keys are rejected. :func:`canonical` fills every default, so
``parse(dump(canonical(cfg)))`` reproduces the same canonical tree.
"""

from __future__ import annotations

import copy
import hashlib
import itertools
import json
import math
from pathlib import Path

import yaml

from .datagen import ModalitySpec, generate, load_csv
from .errors import ConfigError
from .inforeg import RegulationConfig
from .numerics import make_rng
from .trainer import TrainConfig

TRAIN_DEFAULTS = {
    "method": "joint", "epochs": 20, "batch_size": 32, "eta": 0.05, "unimodal_loss_weight": None,
    "seed": 0, "beta": 0.9, "K": 0.04, "warmup_epochs": 2,
    "log_gradients": False, "store_gradients": False, "log_descent": False,
}
MODEL_DEFAULTS = {"hidden": [32, 32], "fusion": "concat"}
GENERATOR_DEFAULTS = {"seed": 0, "num_classes": 4, "n_train": 2000, "n_test": 2000}
MODALITY_KEYS = {"name", "dim", "informative_dims", "class_separation", "noise_sigma"}
SWEEP_KEYS = ("method", "seed", "beta", "K", "epochs", "eta")
TOP_KEYS = {"dataset", "model", "train", "sweep", "output"}


def _only(section: str, d, allowed) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(extra)}")
    return d


def _float(v, where):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", ".inf"):
        return math.inf
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {v!r}") from None


def _sweep_value(key: str, v):
    if key in ("beta", "K", "eta"):
        return _float(v, f"sweep.{key}")
    if key in ("seed", "epochs"):
        try:
            return int(v)
        except (TypeError, ValueError):
            raise ConfigError(f"sweep.{key}: expected an integer, got {v!r}") from None
    return str(v)


def canonical(raw: dict) -> dict:
    """Validate a raw tree and return it with every default filled in."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _only("config", raw, TOP_KEYS)
    ds = _only("dataset", raw.get("dataset"), {"generator", "csv"})
    if ("generator" in ds) == ("csv" in ds):
        raise ConfigError("dataset needs exactly one of 'generator' or 'csv'")
    out = {"dataset": {}}
    if "generator" in ds:
        g = _only("dataset.generator", ds["generator"], set(GENERATOR_DEFAULTS) | {"modalities"})
        gen = {k: int(g.get(k, v)) for k, v in GENERATOR_DEFAULTS.items()}
        mods = g.get("modalities")
        if not isinstance(mods, list) or len(mods) < 2:
            raise ConfigError("dataset.generator.modalities must list at least two modalities")
        gen["modalities"] = []
        for i, m in enumerate(mods):
            m = _only(f"dataset.generator.modalities[{i}]", m, MODALITY_KEYS)
            try:
                spec = {"name": str(m.get("name", f"m{i}")), "dim": int(m["dim"]),
                        "informative_dims": int(m.get("informative_dims", 0)),
                        "class_separation": _float(m.get("class_separation", 0.0), f"modalities[{i}]"),
                        "noise_sigma": _float(m.get("noise_sigma", 1.0), f"modalities[{i}]")}
            except KeyError as exc:
                raise ConfigError(f"dataset.generator.modalities[{i}] is missing {exc}") from None
            ModalitySpec(**spec)
            gen["modalities"].append(spec)
        out["dataset"]["generator"] = gen
    else:
        c = _only("dataset.csv", ds["csv"], {"train", "test", "num_classes"})
        if not c.get("train") or not c.get("test"):
            raise ConfigError("dataset.csv needs 'train' and 'test' path lists")
        out["dataset"]["csv"] = {"train": [str(p) for p in c["train"]], "test": [str(p) for p in c["test"]],
                                 "num_classes": None if c.get("num_classes") is None else int(c["num_classes"])}
    m = _only("model", raw.get("model"), MODEL_DEFAULTS)
    out["model"] = {"hidden": [int(h) for h in m.get("hidden", MODEL_DEFAULTS["hidden"])],
                    "fusion": str(m.get("fusion", MODEL_DEFAULTS["fusion"]))}
    t = _only("train", raw.get("train"), TRAIN_DEFAULTS)
    train = dict(TRAIN_DEFAULTS)
    train.update(t)
    for k in ("epochs", "batch_size", "seed", "warmup_epochs"):
        train[k] = int(train[k])
    for k in ("eta", "beta", "K"):
        train[k] = _float(train[k], f"train.{k}")
    if train["unimodal_loss_weight"] is not None:
        train["unimodal_loss_weight"] = _float(train["unimodal_loss_weight"], "train.unimodal_loss_weight")
    for k in ("log_gradients", "store_gradients", "log_descent"):
        train[k] = bool(train[k])
    out["train"] = train
    s = _only("sweep", raw.get("sweep"), SWEEP_KEYS)
    sweep = {}
    for k in SWEEP_KEYS:
        if k in s:
            vals = s[k] if isinstance(s[k], list) else [s[k]]
            if not vals:
                raise ConfigError(f"sweep.{k} is empty")
            sweep[k] = [_sweep_value(k, v) for v in vals]
    out["sweep"] = sweep
    out["output"] = str(raw.get("output", "runs"))
    # validate every expanded run eagerly
    for tc in expand(out):
        pass
    return out


def parse(text: str) -> dict:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    return canonical(raw)


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse(text)


def dump(cfg: dict) -> str:
    return yaml.safe_dump(_yaml_safe(cfg), sort_keys=True, default_flow_style=False)


def _yaml_safe(o):
    if isinstance(o, dict):
        return {k: _yaml_safe(v) for k, v in o.items()}
    if isinstance(o, list):
        return [_yaml_safe(v) for v in o]
    if isinstance(o, float) and math.isinf(o):
        return "inf" if o > 0 else "-inf"
    return o


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(_yaml_safe(cfg), sort_keys=True).encode()).hexdigest()


def expand(cfg: dict) -> list[TrainConfig]:
    """Cross product of the sweep section over the base train section."""
    sweep = cfg.get("sweep") or {}
    keys = [k for k in SWEEP_KEYS if k in sweep]
    runs, seen = [], set()
    for combo in itertools.product(*(sweep[k] for k in keys)) if keys else [()]:
        t = dict(cfg["train"])
        t.update(dict(zip(keys, combo)))
        try:
            tc = TrainConfig(
                method=str(t["method"]), epochs=int(t["epochs"]), batch_size=int(t["batch_size"]),
                eta=_float(t["eta"], "train.eta"), unimodal_loss_weight=t["unimodal_loss_weight"],
                regulation=RegulationConfig(_float(t["beta"], "beta"), _float(t["K"], "K"), int(t["warmup_epochs"])),
                seed=int(t["seed"]), hidden=tuple(cfg["model"]["hidden"]), fusion=cfg["model"]["fusion"],
                log_gradients=t["log_gradients"], store_gradients=t["store_gradients"], log_descent=t["log_descent"])
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
        if tc.run_id in seen:
            raise ConfigError(f"sweep produces duplicate run id {tc.run_id}")
        seen.add(tc.run_id)
        runs.append(tc)
    return runs


def with_overrides(cfg: dict, seed: int | None = None, out: str | None = None) -> dict:
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["train"]["seed"] = int(seed)
        cfg["sweep"].pop("seed", None)
    if out is not None:
        cfg["output"] = str(out)
    return canonical(cfg)


def build_datasets(cfg: dict, base_dir=None):
    ds = cfg["dataset"]
    if "generator" in ds:
        g = ds["generator"]
        specs = [ModalitySpec(**m) for m in g["modalities"]]
        train = generate(specs, g["num_classes"], g["n_train"], make_rng(g["seed"], "data"), "train")
        test = generate(specs, g["num_classes"], g["n_test"], make_rng(g["seed"], "test_data"), "test")
        return train, test
    c = ds["csv"]
    base = Path(base_dir) if base_dir else Path(".")
    resolve = lambda ps: [p if Path(p).is_absolute() else base / p for p in ps]
    train = load_csv(resolve(c["train"]), c["num_classes"], "train")
    k = c["num_classes"] or train.num_classes
    test = load_csv(resolve(c["test"]), k, "test")
    if train.num_classes != test.num_classes:
        k = max(train.num_classes, test.num_classes)
        train.num_classes = test.num_classes = k
    if train.dims != test.dims:
        raise ConfigError(f"train modality dims {train.dims} differ from test dims {test.dims}")
    return train, test


def preset_path(name: str) -> Path:
    """Path of a bundled preset (``strong_weak``, ``beta_sweep``, ...)."""
    p = Path(__file__).parent / "presets" / f"{name}.yaml"
    if not p.exists():
        known = sorted(q.stem for q in p.parent.glob("*.yaml"))
        raise ConfigError(f"no preset named {name!r}; known presets: {known}")
    return p


def resolve(path_or_preset) -> Path:
    p = Path(path_or_preset)
    if p.exists() or p.suffix in (".yaml", ".yml"):
        return p
    return preset_path(str(path_or_preset))
