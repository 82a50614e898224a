"""Late-fusion multimodal MLP: one ReLU encoder per modality, concat or sum
fusion, one linear classifier on top.

Per-modality predictions zero the other modalities' features before the
classifier, for every fusion kind. With concat fusion that is the same as
multiplying by modality m's block of classifier rows and adding the full bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, DimensionError, InputError

FUSIONS = ("concat", "sum")


@dataclass
class ModelParams:
    encoders: list[list[np.ndarray]]  # per modality [W1, b1, W2, b2, ...]
    W: np.ndarray
    b: np.ndarray
    fusion: str = "concat"
    version: int = 0  # bumped on every in-place update, used to detect stale traces

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        outs = [enc[-2].shape[1] for enc in self.encoders]
        expect = sum(outs) if self.fusion == "concat" else outs[0]
        if self.fusion == "sum" and len(set(outs)) != 1:
            raise DimensionError(f"sum fusion needs equal encoder output dims, got {outs}")
        if self.W.shape[0] != expect or self.b.shape != (self.W.shape[1],):
            raise DimensionError(f"classifier {self.W.shape}/{self.b.shape} does not fit fused dim {expect}")

    @property
    def num_modalities(self) -> int:
        return len(self.encoders)

    @property
    def num_classes(self) -> int:
        return self.W.shape[1]

    @property
    def feature_dims(self) -> list[int]:
        return [enc[-2].shape[1] for enc in self.encoders]

    def encoder_size(self, m: int) -> int:
        return sum(a.size for a in self.encoders[m])

    def encoder_flat(self, m: int) -> np.ndarray:
        return nx.flatten(self.encoders[m])

    def set_encoder_flat(self, m: int, flat: np.ndarray) -> None:
        nx.unflatten_into(self.encoders[m], flat)
        self.version += 1

    def all_arrays(self) -> list[np.ndarray]:
        return [a for enc in self.encoders for a in enc] + [self.W, self.b]

    def copy(self) -> "ModelParams":
        return ModelParams([[a.copy() for a in enc] for enc in self.encoders],
                           self.W.copy(), self.b.copy(), self.fusion, self.version)


def init_params(input_dims, hidden, num_classes: int, fusion: str, rng: np.random.Generator) -> ModelParams:
    """Every layer uniform in +-1/sqrt(fan_in), weights and biases alike."""
    if not hidden:
        raise ConfigError("encoder needs at least one hidden layer")

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

    encoders = []
    for d in input_dims:
        enc, fan_in = [], d
        for h in hidden:
            enc.extend(layer(fan_in, h))
            fan_in = h
        encoders.append(enc)
    fused = hidden[-1] * (len(input_dims) if fusion == "concat" else 1)
    W, b = layer(fused, num_classes)
    return ModelParams(encoders, W, b, fusion)


@dataclass
class ForwardTrace:
    inputs: list[list[np.ndarray]]  # per modality, input to each linear layer
    preacts: list[list[np.ndarray]]  # per modality, pre-ReLU value of each layer
    features: list[np.ndarray]
    fused: np.ndarray
    logits: np.ndarray
    version: int


@dataclass
class LossParts:
    joint: float
    unimodal: list[float]
    total: float


@dataclass
class GradSet:
    encoders: list[list[np.ndarray]]
    W: np.ndarray
    b: np.ndarray
    flat: list[np.ndarray] = field(default_factory=list)
    sq_norms: list[float] = field(default_factory=list)

    def all_arrays(self) -> list[np.ndarray]:
        return [a for enc in self.encoders for a in enc] + [self.W, self.b]

    def refresh(self) -> None:
        """Recompute the flat views and squared norms after editing encoder grads."""
        self.flat = [nx.flatten(enc) for enc in self.encoders]
        self.sq_norms = [nx.norm_sq(f) for f in self.flat]


def _encode(enc, x):
    inputs, preacts = [], []
    h = x
    for W, b in zip(enc[0::2], enc[1::2]):
        inputs.append(h)
        z = nx.linear_forward(h, W, b)
        preacts.append(z)
        h = nx.relu(z)
    return h, inputs, preacts


def fuse(params: ModelParams, features) -> np.ndarray:
    if params.fusion == "concat":
        return np.concatenate(features, axis=1)
    return np.sum(features, axis=0)


def forward(params: ModelParams, xs) -> tuple[np.ndarray, ForwardTrace]:
    if len(xs) != params.num_modalities:
        raise DimensionError(f"batch has {len(xs)} modalities, model has {params.num_modalities}")
    inputs, preacts, feats = [], [], []
    for m, (enc, x) in enumerate(zip(params.encoders, xs)):
        if x.ndim != 2 or x.shape[1] != enc[0].shape[0]:
            raise DimensionError(f"modality {m} input {x.shape} vs encoder input dim {enc[0].shape[0]}")
        f, i, p = _encode(enc, x)
        inputs.append(i)
        preacts.append(p)
        feats.append(f)
    fused = fuse(params, feats)
    logits = nx.linear_forward(fused, params.W, params.b)
    return logits, ForwardTrace(inputs, preacts, feats, fused, logits, params.version)


def _block(params: ModelParams, m: int) -> slice:
    if params.fusion == "sum":
        return slice(0, params.W.shape[0])
    dims = params.feature_dims
    start = sum(dims[:m])
    return slice(start, start + dims[m])


def unimodal_logits_from_features(params: ModelParams, features, m: int) -> np.ndarray:
    if not 0 <= m < params.num_modalities:
        raise InputError(f"modality index {m} out of range [0, {params.num_modalities})")
    # zeroed features contribute nothing, so only modality m's block of rows matters
    return features[m] @ params.W[_block(params, m)] + params.b


def unimodal_logits(params: ModelParams, xs, m: int) -> np.ndarray:
    if not 0 <= m < params.num_modalities:
        raise InputError(f"modality index {m} out of range [0, {params.num_modalities})")
    f, _, _ = _encode(params.encoders[m], xs[m])
    return unimodal_logits_from_features(params, {m: f}, m)


def backward(params: ModelParams, trace: ForwardTrace, labels, unimodal_weight: float = 0.0):
    """Gradients of joint CE + unimodal_weight * sum of per-modality CE losses."""
    if trace.version != params.version:
        raise ContractError("forward trace is stale: parameters changed since it was computed")
    M = params.num_modalities
    joint, gl = nx.softmax_cross_entropy(trace.logits, labels)
    gW, gb, gfused = trace.fused.T @ gl, gl.sum(axis=0), gl @ params.W.T
    gfeat = [gfused[:, _block(params, m)].copy() for m in range(M)]

    uni = []
    for m in range(M):
        lm = unimodal_logits_from_features(params, trace.features, m)
        loss_m, glm = nx.softmax_cross_entropy(lm, labels)
        uni.append(loss_m)
        if unimodal_weight:
            glm = glm * unimodal_weight
            rows = _block(params, m)
            gW[rows] += trace.features[m].T @ glm
            gb += glm.sum(axis=0)
            gfeat[m] += glm @ params.W[rows].T

    enc_grads = []
    for m, enc in enumerate(params.encoders):
        g = gfeat[m]
        grads = [None] * len(enc)
        for li in range(len(enc) // 2 - 1, -1, -1):
            g = nx.relu_backward(g, trace.preacts[m][li])
            g, grads[2 * li], grads[2 * li + 1] = nx.linear_backward(g, trace.inputs[m][li], enc[2 * li])
        enc_grads.append(grads)

    gs = GradSet(enc_grads, gW, gb)
    gs.refresh()
    total = joint + unimodal_weight * sum(uni)
    return LossParts(joint, uni, total), gs


def predict(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(logits, axis=1)


def evaluate(params: ModelParams, ds) -> tuple[float, list[float]]:
    """Overall accuracy and per-modality accuracy under the zeroing protocol."""
    if len(ds) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    logits, trace = forward(params, ds.modalities)
    overall = float(np.mean(predict(logits) == ds.labels))
    per = [float(np.mean(predict(unimodal_logits_from_features(params, trace.features, m)) == ds.labels))
           for m in range(params.num_modalities)]
    return overall, per


def _pack(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.ravel()]}


def _unpack(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def save_checkpoint(params: ModelParams, path) -> None:
    """JSON dump: every tensor as {"shape": [...], "data": [row-major floats]}."""
    doc = {
        "format": "inforeg-lab-checkpoint/1",
        "fusion": params.fusion,
        "encoders": [[_pack(a) for a in enc] for enc in params.encoders],
        "classifier": {"W": _pack(params.W), "b": _pack(params.b)},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelParams:
    doc = json.loads(Path(path).read_text())
    return ModelParams([[_unpack(a) for a in enc] for enc in doc["encoders"]],
                       _unpack(doc["classifier"]["W"]), _unpack(doc["classifier"]["b"]), doc["fusion"])
