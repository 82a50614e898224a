"""Dense float64 kernels with hand-written reverse-mode gradients.

Arrays are plain ``numpy.ndarray`` in float64. Every ``*_backward`` takes the
upstream gradient plus whatever the forward pass needs, and returns exact
analytic gradients.

Randomness comes from :func:`make_rng`: a PCG64 generator seeded through
``SeedSequence([seed, stream])``. PCG64 output is specified bit-for-bit, so a
given (seed, stream) pair yields the same numbers on every platform. Each
consumer (data, init, shuffle, ...) gets its own stream so that changing one
does not perturb the others.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, InputError, UndefinedInputError

STREAMS = {"data": 0, "init": 1, "shuffle": 2, "test_data": 3, "mc": 4}


def make_rng(seed: int, stream: str | int = 0) -> np.random.Generator:
    sid = STREAMS[stream] if isinstance(stream, str) else int(stream)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), sid])))


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1:
        raise DimensionError(f"linear_forward expects 2-d x, 2-d W, 1-d b; got {x.shape}, {W.shape}, {b.shape}")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot apply {W.shape} weight / {b.shape} bias to input {x.shape}")
    return x @ W + b


def linear_backward(upstream: np.ndarray, x: np.ndarray, W: np.ndarray):
    """Return (gx, gW, gb) for y = xW + b."""
    if upstream.shape != (x.shape[0], W.shape[1]) or x.shape[1] != W.shape[0]:
        raise DimensionError(f"upstream {upstream.shape} does not match forward x {x.shape}, W {W.shape}")
    return upstream @ W.T, x.T @ upstream, upstream.sum(axis=0)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(upstream: np.ndarray, x: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    if upstream.shape != x.shape:
        raise DimensionError(f"upstream {upstream.shape} vs cached input {x.shape}")
    return np.where(x > 0.0, upstream, 0.0)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels: np.ndarray, n: int, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k})")
    return labels.astype(np.int64, copy=False)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-d, got {logits.shape}")
    n, k = logits.shape
    labels = _check_labels(labels, n, k)
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -float(logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def norm_sq(v: np.ndarray) -> float:
    v = np.ravel(v)
    return float(np.dot(v, v))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u, v = np.ravel(u), np.ravel(v)
    if u.shape != v.shape:
        raise DimensionError(f"cosine of vectors with lengths {u.size} and {v.size}")
    nu, nv = norm_sq(u), norm_sq(v)
    if nu == 0.0 or nv == 0.0:
        raise UndefinedInputError("cosine is undefined for a zero vector")
    c = float(np.dot(u, v)) / np.sqrt(nu * nv)
    return min(1.0, max(-1.0, c))


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def unflatten_into(arrays, flat: np.ndarray) -> None:
    """Copy ``flat`` back into ``arrays`` in place, in order."""
    total = sum(a.size for a in arrays)
    if flat.size != total:
        raise DimensionError(f"flat vector of length {flat.size} for {total} parameters")
    pos = 0
    for a in arrays:
        a[...] = flat[pos:pos + a.size].reshape(a.shape)
        pos += a.size
