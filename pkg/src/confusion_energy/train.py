"""Momentum SGD with cosine annealing on CE, CE + ACE, or CE + PC.

The learnable adaptive diagonal is stepped together with the network: a
momentum step on the confusion-energy gradient followed by the exact
proximal map of the tether ``lam * eta * ||a_hat - a||^2`` and a projection
onto positive values.  The proximal form keeps very large ``eta`` stable.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import ace as ace_ops
from .data import Dataset
from .errors import DivergenceError, ValidationError
from .evaluate import top1
from .model import ModelParams, backward, cross_entropy, forward, init_params
from .streams import stream

METHODS = ("ce_only", "pc", "ace")
SAMPLERS = ("instance_balanced", "distinct_class", "class_balanced")
A_HAT_FLOOR = 1e-8

# lambda / tau per data regime; lr is scaled for desk-size problems
PRESETS = {
    "fgvc": {"lam": 10.0, "tau": 0.0},
    "long_tail": {"lam": 0.25, "tau": 0.1},
    "natural_world": {"lam": 2.0, "tau": 0.0},
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    lam: float = 0.0
    tau: float = 0.0
    eta: float = 1.0
    learnable_a: bool = False
    sampler: str = "instance_balanced"
    method: str = "ce_only"
    bcn_path: str = "trace_fast"
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if not 0 <= self.momentum < 1:
            problems.append("momentum must be in [0, 1)")
        if not (self.lam >= 0 and self.tau >= 0 and self.eta >= 0):
            problems.append("lambda, tau and eta must be non-negative")
        if self.sampler not in SAMPLERS:
            problems.append(f"sampler must be one of {SAMPLERS}")
        if self.method not in METHODS:
            problems.append(f"method must be one of {METHODS}")
        if self.bcn_path not in ace_ops.BCN_PATHS:
            problems.append(f"bcn_path must be one of {ace_ops.BCN_PATHS}")
        if self.method == "pc" and self.learnable_a:
            problems.append("method=pc cannot use a learnable adaptive matrix")
        if self.method == "pc" and self.batch_size < 2:
            problems.append("method=pc needs batch_size >= 2")
        if problems:
            raise ValidationError("; ".join(problems))

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        return cls(**{"method": "ace", **PRESETS[name], **overrides})


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    if not 0 <= epoch < total_epochs:
        raise ValidationError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class BatchSampler:
    """Draws index batches from a dataset under one of three policies."""

    def __init__(self, ds: Dataset, batch_size: int, kind: str, rng: np.random.Generator):
        if kind not in SAMPLERS:
            raise ValidationError(f"unknown sampler {kind!r}")
        self.ds, self.M, self.kind, self.rng = ds, batch_size, kind, rng
        self.n = len(ds)
        if self.n == 0:
            raise ValidationError("cannot sample from an empty dataset")
        self.classes = np.flatnonzero(ds.class_counts)
        self.by_class = {int(c): np.flatnonzero(ds.labels == c) for c in self.classes}
        if kind == "distinct_class" and batch_size > self.classes.size:
            raise ValidationError(
                f"distinct_class sampling needs batch_size <= number of classes ({batch_size} > {self.classes.size})"
            )

    def sample(self) -> np.ndarray:
        rng, M = self.rng, self.M
        if self.kind == "instance_balanced":
            return rng.choice(self.n, size=M, replace=M > self.n)
        if self.kind == "class_balanced":
            picks = rng.choice(self.classes, size=M)
            return np.array([self.by_class[int(c)][rng.integers(self.by_class[int(c)].size)] for c in picks])
        chosen, seen = [], set()
        while len(chosen) < M:
            i = int(rng.integers(self.n))
            y = int(self.ds.labels[i])
            if y not in seen:
                seen.add(y)
                chosen.append(i)
        return np.array(chosen)


def sample_batch(ds: Dataset, M: int, sampler: str, rng: np.random.Generator) -> np.ndarray:
    return BatchSampler(ds, M, sampler, rng).sample()


def _pairs(labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    M = len(labels)
    if M < 2:
        raise ValidationError("pairwise confusion needs at least two samples")
    a = np.arange(0, M - 1, 2)
    b = a + 1
    labels = np.asarray(labels)
    return a, b, labels[a] != labels[b]


def pc_loss(P, labels) -> float:
    """Mean squared distance over consecutive pairs; same-label pairs count as 0."""
    P = P.P if isinstance(P, ace_ops.PredictionBatch) else np.asarray(P, dtype=np.float64)
    a, b, distinct = _pairs(labels)
    d = P[:, a] - P[:, b]
    return float(np.sum(np.sum(d * d, axis=0) * distinct) / a.size)


def pc_grad_wrt_P(P, labels) -> np.ndarray:
    P = P.P if isinstance(P, ace_ops.PredictionBatch) else np.asarray(P, dtype=np.float64)
    a, b, distinct = _pairs(labels)
    G = np.zeros_like(P)
    d = 2.0 * (P[:, a] - P[:, b]) * distinct / a.size
    G[:, a] = d
    G[:, b] = -d
    return G


def _adaptive_for(ds: Dataset, cfg: TrainConfig) -> ace_ops.AdaptiveMatrix:
    return ace_ops.build_adaptive_matrix(ace_ops.AdaptiveSpec(ds.class_counts, cfg.tau))


def train(
    params: ModelParams,
    train_ds: Dataset,
    test_ds: Dataset | None,
    cfg: TrainConfig,
    sampler_stream: str = "sampler",
    on_step: Callable[[int, ModelParams], None] | None = None,
) -> tuple[ModelParams, TrainLog, ace_ops.AdaptiveMatrix | None]:
    """Run ``epochs * ceil(n / batch_size)`` optimizer steps.

    Returns the trained copy of ``params``, one log record per epoch, and the
    final adaptive matrix (None unless ``method == "ace"``).  ``on_step`` is
    called with the step index and the live parameters after every update.
    """
    if train_ds.feature_dim != params.in_dim:
        raise ValidationError(f"dataset has {train_ds.feature_dim} features, model expects {params.in_dim}")
    if train_ds.num_classes > params.num_classes:
        raise ValidationError(f"dataset has {train_ds.num_classes} classes, model outputs {params.num_classes}")
    params = params.copy()
    sampler = BatchSampler(train_ds, cfg.batch_size, cfg.sampler, stream(cfg.seed, sampler_stream))
    steps = math.ceil(len(train_ds) / cfg.batch_size)
    velocity = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params.layers]

    A = None
    a_vel = None
    if cfg.method == "ace":
        A = _adaptive_for(train_ds, cfg)
        if params.num_classes != train_ds.num_classes:
            raise ValidationError("ACE needs the model and dataset to agree on the class count")
        a_vel = np.zeros_like(A.diag)

    log = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs)
        sums = np.zeros(3)
        for _ in range(steps):
            X, y = train_ds.subset(sampler.sample())
            batch, cache = forward(params, X, y)
            P = batch.P
            ce = cross_entropy(P, y)
            reg, reg_grad = 0.0, None
            if cfg.method == "ace":
                if cfg.learnable_a:
                    reg = ace_ops.ace_loss_learnable(P, A, cfg.eta, cfg.bcn_path)
                else:
                    reg = ace_ops.ace_energy(P, A, cfg.bcn_path)
                reg_grad = ace_ops.ace_grad_wrt_logits(P, A)
            elif cfg.method == "pc":
                reg = pc_loss(P, y)
                reg_grad = ace_ops.softmax_backward(P, pc_grad_wrt_P(P, y))
            loss = ace_ops.total_loss(ce, reg, cfg.lam)
            if not math.isfinite(loss):
                raise DivergenceError(step, loss)

            grads = backward(params, cache, y, reg_grad, cfg.lam)
            for i, ((W, b), (gW, gb), (vW, vb)) in enumerate(zip(params.layers, grads, velocity)):
                vW = cfg.momentum * vW + gW
                vb = cfg.momentum * vb + gb
                velocity[i] = (vW, vb)
                params.layers[i] = (W - lr * vW, b - lr * vb)

            if cfg.method == "ace" and cfg.learnable_a:
                # smooth part only; the tether is handled by its proximal map
                g = cfg.lam * 2.0 * A.diag * np.sum(P * P, axis=1)
                a_vel = cfg.momentum * a_vel + g
                shrink = 2.0 * lr * cfg.lam * cfg.eta
                a_new = (A.diag - lr * a_vel + shrink * A.frozen_reference) / (1.0 + shrink)
                A = A.with_diag(np.maximum(a_new, A_HAT_FLOOR))

            sums += (loss, ce, reg)
            if on_step is not None:
                on_step(step, params)
            step += 1

        means = sums / steps
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(means[0]),
            "ce_term": float(means[1]),
            "ace_term": float(means[2]),
            "train_acc": top1(params, train_ds)[1],
            "val_acc": top1(params, test_ds)[1] if test_ds is not None else None,
        }
        if cfg.method == "ace" and cfg.learnable_a:
            record["A_hat"] = A.diag.tolist()
        log.records.append(record)
    return params, log, A


def hidden_features(params: ModelParams, features) -> np.ndarray:
    """Output of every layer except the classifier (raw input for linear models)."""
    H = np.asarray(features, dtype=np.float64).T
    for W, b in params.layers[:-1]:
        H = np.maximum(W @ H + b[:, None], 0.0)
    return np.ascontiguousarray(H.T)


class FrozenRepresentationWarning(UserWarning):
    pass


def crt_second_stage(params: ModelParams, train_ds: Dataset, cfg: TrainConfig) -> ModelParams:
    """Re-initialise and retrain only the classifier with class-balanced CE."""
    if len(params.layers) == 1:
        warnings.warn(
            "linear model: the frozen representation is the raw input features",
            FrozenRepresentationWarning,
            stacklevel=2,
        )
    H = hidden_features(params, train_ds.features)
    feats = Dataset(H, train_ds.labels, train_ds.num_classes, train_ds.split)
    head = init_params(H.shape[1], params.num_classes, stream(cfg.seed, "crt.init"), "linear")
    stage2 = replace(cfg, method="ce_only", sampler="class_balanced", learnable_a=False, lam=0.0)
    head, _, _ = train(head, feats, None, stage2, sampler_stream="crt.sampler")
    out = params.copy()
    out.layers[-1] = head.layers[0]
    return out
