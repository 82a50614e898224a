"""Fisher-information trace tracking and prime-learning-window detection.

The per-epoch trace for modality m is the mean, over the batches of that
epoch, of the squared norm of the encoder-m gradient. Gradients come from the
live training loop, so the weights move while the epoch accumulates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InputError, NotReadyError
from .numerics import norm_sq

EPS = 1e-12


@dataclass
class EpochTraceAccumulator:
    num_modalities: int
    store_gradients: bool = False
    sums: np.ndarray = None
    count: int = 0
    stored: list = field(default_factory=list)  # per modality list of flat grads

    def __post_init__(self):
        self.sums = np.zeros(self.num_modalities)
        self.stored = [[] for _ in range(self.num_modalities)]

    def record(self, grads) -> None:
        for m in range(self.num_modalities):
            self.sums[m] += grads.sq_norms[m]
            if self.store_gradients:
                self.stored[m].append(grads.flat[m].copy())
        self.count += 1

    def finalize(self) -> list[float]:
        if self.count == 0:
            raise ContractError("finalize_epoch called before any batch was recorded")
        return [float(s) / self.count for s in self.sums]


def record(acc: EpochTraceAccumulator, grads) -> None:
    acc.record(grads)


def finalize_epoch(acc: EpochTraceAccumulator) -> list[float]:
    return acc.finalize()


@dataclass
class FisherHistory:
    num_modalities: int
    traces: list[list[float]] = field(default_factory=list)  # [epoch][modality]
    windows: list[list[bool] | None] = field(default_factory=list)  # None for t < 2

    @property
    def epochs(self) -> int:
        return len(self.traces)

    def append(self, values, window_flags=None) -> None:
        if len(values) != self.num_modalities:
            raise InputError(f"{len(values)} trace values for {self.num_modalities} modalities")
        self.traces.append([float(v) for v in values])
        self.windows.append(None if window_flags is None else list(window_flags))

    def series(self, m: int) -> np.ndarray:
        return np.array([row[m] for row in self.traces])


def window_ratio(prev2: float, prev1: float) -> float:
    if prev1 <= EPS:
        return float("-inf")
    return (prev1 - prev2) / prev1


def prime_window(history: FisherHistory, m: int, K: float, t: int | None = None) -> bool:
    """Relative rise of the trace over the two epochs before ``t`` exceeds ``K``.

    ``t`` defaults to the next epoch to run (``history.epochs``). Raises
    NotReadyError when fewer than two epochs precede ``t``.
    """
    t = history.epochs if t is None else t
    if t < 2 or t > history.epochs:
        raise NotReadyError(f"prime window needs two completed epochs before t={t} (have {history.epochs})")
    return window_ratio(history.traces[t - 2][m], history.traces[t - 1][m]) > K


def batch_cosine_matrix(grads) -> np.ndarray:
    """Pairwise cosine of stored batch gradients; NaN where a norm is zero."""
    grads = [np.ravel(g) for g in grads]
    if len(grads) < 2:
        raise InputError("need at least two stored gradients")
    G = np.stack(grads)
    norms = np.sqrt(np.einsum("ij,ij->i", G, G))
    ok = norms > 0
    safe = np.where(ok, norms, 1.0)
    C = (G @ G.T) / np.outer(safe, safe)
    C = np.clip(C, -1.0, 1.0)
    C[~ok, :] = np.nan
    C[:, ~ok] = np.nan
    idx = np.flatnonzero(ok)
    C[idx, idx] = 1.0
    return C


def mean_offdiag_abs(C: np.ndarray) -> float:
    mask = ~np.eye(C.shape[0], dtype=bool)
    return float(np.nanmean(np.abs(C[mask])))


def trace_gap(history: FisherHistory, m1: int, m2: int, other: FisherHistory | None = None) -> np.ndarray:
    """Per-epoch Tr_m1 - Tr_m2. With ``other``, m2 is read from that history."""
    a = history.series(m1)
    b = (other or history).series(m2)
    if a.shape != b.shape:
        raise InputError(f"trace histories differ in length: {a.size} vs {b.size}")
    return a - b


def write_traces_csv(history: FisherHistory, path, names=None) -> None:
    names = names or [f"m{m}" for m in range(history.num_modalities)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "modality", "value", "window"])
        for t, (row, flags) in enumerate(zip(history.traces, history.windows)):
            for m, v in enumerate(row):
                w.writerow([t, names[m], repr(v), "" if flags is None else int(flags[m])])


def write_cosine_csv(C: np.ndarray, path, epoch: int, modality: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "modality", "i", "j", "value"])
        for i in range(C.shape[0]):
            for j in range(C.shape[1]):
                w.writerow([epoch, modality, i, j, "" if np.isnan(C[i, j]) else repr(float(C[i, j]))])


__all__ = [
    "EpochTraceAccumulator", "FisherHistory", "record", "finalize_epoch", "prime_window", "window_ratio",
    "batch_cosine_matrix", "mean_offdiag_abs", "trace_gap", "write_traces_csv", "write_cosine_csv", "norm_sq",
]
