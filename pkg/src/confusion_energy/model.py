"""From-scratch softmax classifier: linear or one hidden ReLU layer.

Samples travel as columns internally: a layer maps ``H`` (in x M) to
``W @ H + b``.  Feature matrices handed in by callers are ``n x d`` rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ace import PredictionBatch, softmax_columns
from .errors import ShapeError, ValidationError

ARCHITECTURES = ("linear", "mlp")
PROB_CLAMP = 1e-12

CHECKPOINT_MAGIC = b"ACECKPT\n"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    layers: list[tuple[np.ndarray, np.ndarray]]
    arch: str = "linear"
    hidden: int | None = None

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams([(W.copy(), b.copy()) for W, b in self.layers], self.arch, self.hidden)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    probs: np.ndarray | None = None


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(
    in_dim: int,
    num_classes: int,
    rng: np.random.Generator,
    arch: str = "linear",
    hidden: int = 64,
) -> ModelParams:
    if arch not in ARCHITECTURES:
        raise ValidationError(f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")
    if in_dim < 1 or num_classes < 2:
        raise ValidationError("need in_dim >= 1 and at least two classes")
    if arch == "linear":
        return ModelParams([(_glorot(rng, num_classes, in_dim), np.zeros(num_classes))], "linear", None)
    if hidden < 1:
        raise ValidationError("hidden width must be positive")
    W1 = _glorot(rng, hidden, in_dim)
    W2 = _glorot(rng, num_classes, hidden)
    return ModelParams([(W1, np.zeros(hidden)), (W2, np.zeros(num_classes))], "mlp", hidden)


def forward(params: ModelParams, features, labels=None) -> tuple[PredictionBatch, ForwardCache]:
    """Softmax predictions for a batch of feature rows.

    Returns the ``C x M`` prediction batch and the activations needed by
    :func:`backward`.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise ShapeError(f"features of shape {X.shape} do not match input dim {params.in_dim}")
    cache = ForwardCache()
    H = X.T
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        cache.inputs.append(H)
        Z = W @ H + b[:, None]
        cache.pre_activations.append(Z)
        H = Z if i == last else np.maximum(Z, 0.0)
    cache.probs = softmax_columns(H)
    lab = None if labels is None else np.asarray(labels, dtype=np.int64)
    return PredictionBatch(cache.probs, lab), cache


def logits(params: ModelParams, features) -> np.ndarray:
    """Raw ``n x C`` class scores, used for argmax evaluation."""
    _, cache = forward(params, features)
    return cache.pre_activations[-1].T


def _check_labels(labels, num_classes: int, batch: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (batch,):
        raise ShapeError(f"expected {batch} labels, got shape {y.shape}")
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    return y


def cross_entropy(P, labels) -> float:
    P = P.P if isinstance(P, PredictionBatch) else np.asarray(P, dtype=np.float64)
    y = _check_labels(labels, P.shape[0], P.shape[1])
    picked = P[y, np.arange(P.shape[1])]
    return float(-np.mean(np.log(np.maximum(picked, PROB_CLAMP))))


def ce_logit_grad(P, labels) -> np.ndarray:
    P = P.P if isinstance(P, PredictionBatch) else np.asarray(P, dtype=np.float64)
    y = _check_labels(labels, P.shape[0], P.shape[1])
    G = P.copy()
    G[y, np.arange(P.shape[1])] -= 1.0
    return G / P.shape[1]


def backward(
    params: ModelParams,
    cache: ForwardCache,
    labels,
    reg_logit_grad=None,
    lam: float = 0.0,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of ``CE + lam * R`` for every layer.

    ``reg_logit_grad`` is dR/dlogits (``C x M``) for whatever batch-level
    regularizer R is in play; it is ignored when None.
    """
    G = ce_logit_grad(cache.probs, labels)
    if reg_logit_grad is not None:
        R = np.asarray(reg_logit_grad, dtype=np.float64)
        if R.shape != G.shape:
            raise ShapeError(f"regularizer gradient {R.shape} does not match logits {G.shape}")
        G = G + lam * R
    grads = []
    for i in range(len(params.layers) - 1, -1, -1):
        W, _ = params.layers[i]
        grads.append((G @ cache.inputs[i].T, G.sum(axis=1)))
        if i > 0:
            G = (W.T @ G) * (cache.pre_activations[i - 1] > 0)
    grads.reverse()
    return grads


def classifier_weight_norms(params: ModelParams) -> np.ndarray:
    W = params.layers[-1][0]
    return np.sqrt(np.sum(W * W, axis=1))


def save_checkpoint(params: ModelParams, path) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": params.arch,
        "hidden": params.hidden,
        "layers": [{"weights": list(W.shape), "biases": list(b.shape)} for W, b in params.layers],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for W, b in params.layers:
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValidationError(f"{path}: not a checkpoint file")
    end = raw.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(raw[len(CHECKPOINT_MAGIC):end])
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {header.get('version')}")
    offset = end + 1
    layers = []
    for spec in header["layers"]:
        arrays = []
        for shape in (spec["weights"], spec["biases"]):
            count = int(np.prod(shape))
            chunk = raw[offset:offset + 8 * count]
            if len(chunk) != 8 * count:
                raise ValidationError(f"{path}: truncated payload")
            arrays.append(np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape))
            offset += 8 * count
        layers.append((arrays[0], arrays[1]))
    if offset != len(raw):
        raise ValidationError(f"{path}: trailing bytes after payload")
    return ModelParams(layers, header["arch"], header["hidden"])
