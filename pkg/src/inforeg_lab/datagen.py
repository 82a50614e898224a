"""Synthetic multimodal classification data and CSV ingestion.

Each modality is a Gaussian mixture with one component per class. Class
``k``'s mean lives on its own block of informative axes and is scaled so that
every pair of class means sits exactly ``class_separation`` apart. Axes beyond
``informative_dims`` carry noise only. A modality is "information-sufficient"
when its separation-to-noise ratio is large.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestionError, InputError


@dataclass(frozen=True)
class ModalitySpec:
    dim: int
    informative_dims: int
    class_separation: float
    noise_sigma: float
    name: str = ""

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError(f"modality dim must be a positive integer, got {self.dim!r}")
        if not 0 <= self.informative_dims <= self.dim:
            raise ConfigError(f"informative_dims={self.informative_dims} must lie in [0, dim={self.dim}]")
        if not self.class_separation >= 0:
            raise ConfigError(f"class_separation must be >= 0, got {self.class_separation!r}")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma!r}")


@dataclass
class MultimodalDataset:
    modalities: list[np.ndarray]
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.modalities = [np.asarray(x, dtype=np.float64) for x in self.modalities]
        n = self.labels.shape[0]
        if not self.modalities:
            raise InputError("a dataset needs at least one modality")
        for m, x in enumerate(self.modalities):
            if x.ndim != 2 or x.shape[0] != n:
                raise InputError(f"modality {m} has shape {x.shape}, expected ({n}, dim)")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InputError(f"labels must lie in [0, {self.num_classes})")
        if not self.names:
            self.names = [f"m{m}" for m in range(len(self.modalities))]

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def num_modalities(self) -> int:
        return len(self.modalities)

    @property
    def dims(self) -> list[int]:
        return [x.shape[1] for x in self.modalities]

    def take(self, idx) -> list[np.ndarray]:
        return [x[idx] for x in self.modalities]

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(self.labels.tobytes())
        for x in self.modalities:
            h.update(np.ascontiguousarray(x).tobytes())
        return h.hexdigest()[:16]


def class_means(spec: ModalitySpec, num_classes: int) -> np.ndarray:
    """Return a (K, dim) array of class means with pairwise distance ``class_separation``.

    Informative axes are dealt round-robin to classes; class k's mean is a
    unit vector spread evenly over its axes, times separation / sqrt(2).
    """
    means = np.zeros((num_classes, spec.dim))
    if spec.class_separation == 0.0:
        return means
    if spec.informative_dims < num_classes:
        raise ConfigError(
            f"need informative_dims >= num_classes ({num_classes}) for a nonzero separation, "
            f"got {spec.informative_dims}")
    owner = np.arange(spec.informative_dims) % num_classes
    for k in range(num_classes):
        axes = np.flatnonzero(owner == k)
        means[k, axes] = 1.0 / math.sqrt(axes.size)
    return means * (spec.class_separation / math.sqrt(2.0))


def generate(specs, num_classes: int, n: int, rng: np.random.Generator, split: str = "train") -> MultimodalDataset:
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if n < num_classes:
        raise ConfigError(f"need N >= K, got N={n}, K={num_classes}")
    if not specs:
        raise ConfigError("no modality specs given")
    labels = rng.permutation(np.arange(n) % num_classes)
    xs = []
    for spec in specs:
        noise = rng.standard_normal((n, spec.dim))
        xs.append(class_means(spec, num_classes)[labels] + spec.noise_sigma * noise)
    return MultimodalDataset(xs, labels, num_classes, split, [s.name or f"m{i}" for i, s in enumerate(specs)])


def save_csv(ds: MultimodalDataset, paths) -> None:
    """Write one CSV per modality: feature columns f0..f{d-1} then ``label``."""
    paths = [Path(p) for p in paths]
    if len(paths) != ds.num_modalities:
        raise InputError(f"{ds.num_modalities} modalities but {len(paths)} paths")
    for x, path in zip(ds.modalities, paths):
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{j}" for j in range(x.shape[1])] + ["label"])
            for row, y in zip(x, ds.labels):
                w.writerow([repr(float(v)) for v in row] + [int(y)])


def _read_one(path: Path):
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise IngestionError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        if "label" not in header:
            raise IngestionError(f"{path}:1: missing 'label' column")
        li = header.index("label")
        feats, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            cell = row[li].strip()
            if cell == "":
                raise IngestionError(f"{path}:{lineno}: missing label")
            try:
                labels.append(int(cell))
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: label {cell!r} is not an integer") from None
            vals = []
            for j, c in enumerate(row):
                if j == li:
                    continue
                try:
                    v = float(c)
                except ValueError:
                    raise IngestionError(f"{path}:{lineno}: non-numeric cell {c!r} in column {header[j]!r}") from None
                if not math.isfinite(v):
                    raise IngestionError(f"{path}:{lineno}: non-finite value {c!r}")
                vals.append(v)
            feats.append(vals)
    x = np.array(feats, dtype=np.float64).reshape(len(feats), len(header) - 1)
    return x, np.array(labels, dtype=np.int64)


def load_csv(paths, num_classes: int | None = None, split: str = "train", names=None) -> MultimodalDataset:
    paths = [Path(p) for p in paths]
    if not paths:
        raise IngestionError("no CSV paths given")
    xs, labels = [], None
    for path in paths:
        x, y = _read_one(path)
        if labels is None:
            labels = y
        elif y.shape != labels.shape:
            raise IngestionError(f"{path}: {y.size} rows but {paths[0]} has {labels.size}")
        elif not np.array_equal(y, labels):
            bad = int(np.flatnonzero(y != labels)[0])
            raise IngestionError(f"{path}:{bad + 2}: label disagrees with {paths[0]}")
        xs.append(x)
    if labels.size and labels.min() < 0:
        raise IngestionError(f"{paths[0]}: negative label")
    k = num_classes if num_classes is not None else (int(labels.max()) + 1 if labels.size else 0)
    if labels.size and labels.max() >= k:
        raise IngestionError(f"{paths[0]}: label {int(labels.max())} outside [0, {k})")
    return MultimodalDataset(xs, labels, max(k, 2), split, list(names or [p.stem for p in paths]))


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch's shuffled partition of range(n); the last batch may be short."""
    if batch_size < 1 or batch_size > n:
        raise InputError(f"batch_size must lie in [1, {n}], got {batch_size}")
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]
