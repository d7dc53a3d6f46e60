"""Accuracy reporting: overall, per class, Many/Median/Few, weight norms."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import ModelParams, classifier_weight_norms, logits

GROUP_NAMES = ("many", "median", "few")


@dataclass(frozen=True)
class GroupSpec:
    """How classes are split into frequency groups by training count.

    ``absolute``: count > hi is Many, count < lo is Few, the rest Median
    (the ImageNet-LT convention is hi=100, lo=20).
    ``percentile``: the ``round(hi*C)`` most frequent classes are Many, the
    ``round(lo*C)`` least frequent are Few.
    """

    mode: str = "percentile"
    hi: float = 1 / 3
    lo: float = 1 / 3

    def __post_init__(self):
        if self.mode == "absolute":
            if not self.hi > self.lo >= 1:
                raise ValidationError(f"absolute thresholds need hi > lo >= 1, got hi={self.hi}, lo={self.lo}")
        elif self.mode == "percentile":
            if not (0 <= self.hi <= 1 and 0 <= self.lo <= 1 and self.hi + self.lo <= 1):
                raise ValidationError(f"percentile fractions must be in [0,1] and sum to <= 1, got {self.hi}, {self.lo}")
        else:
            raise ValidationError(f"unknown group mode {self.mode!r}")

    def assign(self, counts) -> np.ndarray:
        """Group index per class: 0 Many, 1 Median, 2 Few."""
        counts = np.asarray(counts)
        groups = np.ones(counts.size, dtype=np.int64)
        if self.mode == "absolute":
            groups[counts > self.hi] = 0
            groups[counts < self.lo] = 2
            return groups
        C = counts.size
        n_many = int(round(self.hi * C))
        n_few = min(int(round(self.lo * C)), C - n_many)
        # most frequent first; equal counts keep class order
        order = np.argsort(-counts, kind="stable")
        groups[order[:n_many]] = 0
        if n_few:
            groups[order[C - n_few:]] = 2
        return groups

    def thresholds(self, counts) -> dict:
        counts = np.asarray(counts)
        groups = self.assign(counts)
        out = {"mode": self.mode, "hi": self.hi, "lo": self.lo}
        for g, name in enumerate(GROUP_NAMES):
            members = counts[groups == g]
            out[name] = None if members.size == 0 else [int(members.min()), int(members.max())]
        return out


@dataclass
class EvalReport:
    top1_total: float
    top1_by_group: dict
    per_class_accuracy: list
    weight_norm_stats: dict
    train_val_gap: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "top1_total": self.top1_total,
            "top1_by_group": self.top1_by_group,
            "per_class_accuracy": self.per_class_accuracy,
            "weight_norm_stats": self.weight_norm_stats,
            "train_val_gap": self.train_val_gap,
        }
        d.update(self.extra)
        return d


def predict(params: ModelParams, features) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(logits(params, features), axis=1)


def top1(params: ModelParams, ds) -> tuple[np.ndarray, float]:
    """Per-class accuracy (NaN for classes absent from ``ds``) and overall."""
    if len(ds.labels) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    pred = predict(params, ds.features)
    correct = pred == ds.labels
    C = max(ds.num_classes, params.num_classes)
    hits = np.bincount(ds.labels, weights=correct, minlength=C)
    totals = np.bincount(ds.labels, minlength=C)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(totals > 0, hits / np.maximum(totals, 1), np.nan)
    return per_class, float(np.mean(correct))


def group_accuracy(per_class_accuracy, train_counts, gspec: GroupSpec | None = None, test_counts=None) -> dict:
    """Sample-weighted accuracy inside each frequency group.

    A group with no (evaluated) classes maps to None rather than 0.
    """
    gspec = gspec or GroupSpec()
    acc = np.asarray(per_class_accuracy, dtype=np.float64)
    weights = np.ones_like(acc) if test_counts is None else np.asarray(test_counts, dtype=np.float64)
    groups = gspec.assign(train_counts)
    out = {}
    for g, name in enumerate(GROUP_NAMES):
        sel = (groups == g) & (weights > 0) & ~np.isnan(acc)
        out[name] = float(np.sum(acc[sel] * weights[sel]) / np.sum(weights[sel])) if sel.any() else None
    return out


def weight_norm_profile(params: ModelParams) -> dict:
    norms = classifier_weight_norms(params)
    mean = float(np.mean(norms))
    std = float(np.std(norms))
    return {
        "mean": mean,
        "std": std,
        "flatness": std / mean if mean > 0 else float("nan"),
        "per_class": norms.tolist(),
    }


def overfit_gap(log) -> float:
    records = getattr(log, "records", log)
    if not records:
        raise ValidationError("training log is empty")
    last = records[-1]
    return float(last["train_acc"] - last["val_acc"])


def evaluate(params: ModelParams, test_ds, train_counts, gspec: GroupSpec | None = None, log=None) -> EvalReport:
    per_class, total = top1(params, test_ds)
    test_counts = np.bincount(test_ds.labels, minlength=per_class.size)
    groups = group_accuracy(per_class, train_counts, gspec, test_counts)
    gap = overfit_gap(log) if log is not None and len(getattr(log, "records", log)) else None
    return EvalReport(
        top1_total=total,
        top1_by_group=groups,
        per_class_accuracy=[None if np.isnan(a) else float(a) for a in per_class],
        weight_norm_stats=weight_norm_profile(params),
        train_val_gap=gap,
    )


def write_per_class_csv(report: EvalReport, train_counts, gspec: GroupSpec | None, path) -> None:
    groups = (gspec or GroupSpec()).assign(train_counts)
    norms = report.weight_norm_stats["per_class"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "train_count", "group", "accuracy", "weight_norm"])
        for c, acc in enumerate(report.per_class_accuracy):
            w.writerow([c, int(train_counts[c]), GROUP_NAMES[groups[c]], "" if acc is None else repr(acc), repr(norms[c])])
