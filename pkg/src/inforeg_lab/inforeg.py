"""Information-acquisition regulation controller.

Per batch: score each modality by its unimodal log-likelihood, measure how far
each modality is ahead of the ones it beats, turn that gap into a proximal
strength alpha, and pull the encoders of modalities that are both ahead and
inside their prime learning window back toward their epoch-start weights.

Scores are log-likelihoods (higher is better), i.e. the negated unimodal
cross-entropy. The weakest modality always gets a zero gap and is never
regulated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError
from .fisher import FisherHistory, prime_window
from .model import unimodal_logits_from_features


@dataclass(frozen=True)
class RegulationConfig:
    beta: float = 0.9
    K: float = 0.04
    warmup_epochs: int = 2

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta!r}")
        if not self.K > 0:
            raise ConfigError(f"K must be > 0, got {self.K!r}")
        if int(self.warmup_epochs) != self.warmup_epochs or self.warmup_epochs < 2:
            raise ConfigError(f"warmup_epochs must be an integer >= 2, got {self.warmup_epochs!r}")


@dataclass
class RegulationDecision:
    scores: list[float]
    deltas: list[float]
    counts: list[int]
    alphas: list[float]
    in_window: list[bool]
    active: list[bool]


class SnapshotStore:
    """Flat copies of every encoder's weights at the last epoch boundary."""

    def __init__(self):
        self._flat: list[np.ndarray] = []

    def take(self, params) -> None:
        self._flat = [params.encoder_flat(m) for m in range(params.num_modalities)]

    def get(self, m: int) -> np.ndarray:
        return self._flat[m]

    def __len__(self):
        return len(self._flat)


def score_from_logits(logits: np.ndarray, labels) -> float:
    labels = np.asarray(labels)
    return float(nx.log_softmax(logits)[np.arange(labels.size), labels].mean())


def modality_score(params, features, labels, m: int) -> float:
    """Mean log softmax probability of the true class under modality m alone."""
    return score_from_logits(unimodal_logits_from_features(params, features, m), labels)


def performance_gap(scores) -> tuple[np.ndarray, np.ndarray]:
    """Return (delta, count) per modality: mean lead over strictly weaker modalities."""
    s = np.asarray(scores, dtype=np.float64)
    deltas = np.zeros(s.size)
    counts = np.zeros(s.size, dtype=np.int64)
    for m in range(s.size):
        lower = np.delete(s, m)
        lower = lower[lower < s[m]]
        counts[m] = lower.size
        if lower.size:
            deltas[m] = float(np.sum(s[m] - lower)) / lower.size
    return deltas, counts


def adaptive_alpha(delta: float, beta: float) -> float:
    return math.exp(beta * math.tanh(delta))


def regulation_grad(w: np.ndarray, snapshot: np.ndarray, alpha: float) -> tuple[float, np.ndarray]:
    """Penalty (alpha/2)|w - snapshot|^2 and its gradient."""
    if w.shape != snapshot.shape:
        raise ContractError(f"weights of length {w.size} vs snapshot of length {snapshot.size}")
    diff = w - snapshot
    return 0.5 * alpha * nx.norm_sq(diff), alpha * diff


def window_flags(history: FisherHistory, config: RegulationConfig, t: int) -> list[bool] | None:
    if t < config.warmup_epochs:
        return None
    return [prime_window(history, m, config.K, t) for m in range(history.num_modalities)]


def decide(flags, scores, config: RegulationConfig, t: int) -> RegulationDecision:
    """Gate regulation for one batch.

    ``flags`` is either a FisherHistory (window flags computed for epoch t) or
    a precomputed list from :func:`window_flags`.
    """
    if isinstance(flags, FisherHistory):
        flags = window_flags(flags, config, t)
    deltas, counts = performance_gap(scores)
    alphas = [adaptive_alpha(float(d), config.beta) for d in deltas]
    M = len(scores)
    in_window = [False] * M if flags is None else [bool(f) for f in flags]
    ready = t >= config.warmup_epochs and flags is not None
    active = [ready and in_window[m] and deltas[m] > 0 for m in range(M)]
    return RegulationDecision([float(v) for v in scores], [float(d) for d in deltas],
                              [int(c) for c in counts], alphas, in_window, active)
