"""Synthetic long-tailed, fine-grained datasets and CSV feature files.

Generation draws K meta-category centres on the positive part of the unit
sphere and places every class mean at ``centre + delta * u`` where ``u`` is
a unit offset.  When the dimension allows, the offsets are orthonormal to
each other and to every centre, so ``delta`` alone sets how alike the
classes of one meta-category are.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError
from .evaluate import GroupSpec
from .streams import stream


class DegenerateGeometryError(ValidationError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    num_meta: int = 2
    feature_dim: int = 64
    fine_grained_scale: float = 0.15
    imbalance_ratio: float = 1.0
    max_count: int = 100
    noise_std: float = 0.1
    test_per_class: int = 50
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if not 1 <= self.num_meta <= self.num_classes:
            problems.append("num_meta must be in [1, num_classes]")
        if self.feature_dim < 1:
            problems.append("feature_dim must be >= 1")
        if not self.fine_grained_scale > 0:
            problems.append("fine_grained_scale must be > 0")
        if not self.imbalance_ratio >= 1:
            problems.append("imbalance_ratio must be >= 1")
        if self.max_count < 1:
            problems.append("max_count must be >= 1")
        if not self.noise_std > 0:
            problems.append("noise_std must be > 0")
        if self.test_per_class < 1:
            problems.append("test_per_class must be >= 1")
        if problems:
            raise ValidationError("; ".join(problems))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValidationError("features must be n x d with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.features[idx], self.labels[idx]


@dataclass
class DatasetStats:
    imbalance_ratio: float
    fine_grained_factor: float
    per_class_counts: list
    group_thresholds: dict

    def to_dict(self) -> dict:
        return {
            "imbalance_ratio": self.imbalance_ratio,
            "fine_grained_factor": self.fine_grained_factor,
            "fine_grained_factor_definition": "mean cosine similarity of raw per-class feature means over unordered class pairs",
            "per_class_counts": self.per_class_counts,
            "group_thresholds": self.group_thresholds,
        }


def long_tail_counts(num_classes: int, max_count: int, ratio: float) -> np.ndarray:
    """``round(max_count * ratio**(-i/(C-1)))``, floored at one sample."""
    i = np.arange(num_classes)
    raw = max_count * np.power(float(ratio), -i / (num_classes - 1))
    # round half up so that e.g. 64.5 -> 65 regardless of banker's rounding
    return np.maximum(np.floor(raw + 0.5).astype(np.int64), 1)


def class_means(spec: SyntheticSpec) -> np.ndarray:
    C, K, d = spec.num_classes, spec.num_meta, spec.feature_dim
    rng = stream(spec.seed, "data.structure")
    centres = np.abs(rng.standard_normal((K, d)))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    raw = rng.standard_normal((C, d))
    meta = np.arange(C) % K
    if d >= K + C:
        q, _ = np.linalg.qr(np.hstack([centres.T, raw.T]))
        offsets = q[:, K:K + C].T
    else:
        c = centres[meta]
        offsets = raw - np.sum(raw * c, axis=1, keepdims=True) * c
        norms = np.linalg.norm(offsets, axis=1, keepdims=True)
        # d == 1 leaves nothing orthogonal to the centre; fall back to the raw draw
        offsets = np.where(norms > 1e-12, offsets / np.maximum(norms, 1e-300), raw / np.linalg.norm(raw, axis=1, keepdims=True))
    return centres[meta] + spec.fine_grained_scale * offsets


def generate(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Train split with the long-tail profile and a class-balanced test split."""
    means = class_means(spec)
    counts = long_tail_counts(spec.num_classes, spec.max_count, spec.imbalance_ratio)
    d = spec.feature_dim

    def draw(name, per_class):
        rng = stream(spec.seed, name)
        labels = np.repeat(np.arange(spec.num_classes), per_class)
        noise = rng.standard_normal((labels.size, d)) * spec.noise_std
        return means[labels] + noise, labels

    Xtr, ytr = draw("data.train", counts)
    Xte, yte = draw("data.test", np.full(spec.num_classes, spec.test_per_class))
    return (
        Dataset(Xtr, ytr, spec.num_classes, "train"),
        Dataset(Xte, yte, spec.num_classes, "test"),
    )


def fine_grained_factor(features, labels, num_classes: int) -> float:
    sums = np.zeros((num_classes, features.shape[1]))
    np.add.at(sums, labels, features)
    counts = np.bincount(labels, minlength=num_classes)
    if np.any(counts == 0):
        raise DegenerateGeometryError(f"classes without samples: {np.flatnonzero(counts == 0).tolist()}")
    means = sums / counts[:, None]
    norms = np.linalg.norm(means, axis=1)
    if np.any(norms == 0):
        raise DegenerateGeometryError(f"zero-norm class mean for classes {np.flatnonzero(norms == 0).tolist()}")
    unit = means / norms[:, None]
    cos = unit @ unit.T
    iu = np.triu_indices(num_classes, k=1)
    return float(np.clip(np.mean(cos[iu]), -1.0, 1.0))


def compute_stats(ds: Dataset, gspec: GroupSpec | None = None) -> DatasetStats:
    counts = ds.class_counts
    if np.any(counts == 0):
        raise DegenerateGeometryError(f"classes without samples: {np.flatnonzero(counts == 0).tolist()}")
    return DatasetStats(
        imbalance_ratio=float(counts.max() / counts.min()),
        fine_grained_factor=fine_grained_factor(ds.features, ds.labels, ds.num_classes),
        per_class_counts=counts.tolist(),
        group_thresholds=(gspec or GroupSpec()).thresholds(counts),
    )


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(ds.feature_dim)])
        for y, row in zip(ds.labels.tolist(), ds.features.tolist()):
            w.writerow([y] + [repr(v) for v in row])


def load_csv(path, split: str = "train", num_classes: int | None = None) -> Dataset:
    """Read ``label,f0,f1,...`` rows; the class count defaults to max label + 1."""
    labels, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty file")
        if not header or header[0].strip() != "label" or len(header) < 2:
            raise ParseError("header must be 'label,f0,f1,...'", line=1)
        width = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise ParseError(f"expected {width} fields, got {len(rec)}", line=lineno)
            try:
                y = int(rec[0])
            except ValueError:
                raise ParseError(f"label {rec[0]!r} is not an integer", line=lineno) from None
            if y < 0:
                raise ParseError(f"negative label {y}", line=lineno)
            try:
                feats = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature ({exc})", line=lineno) from None
            if not all(math.isfinite(v) for v in feats):
                raise ParseError("non-finite feature value", line=lineno)
            labels.append(y)
            rows.append(feats)
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    C = max(labels) + 1 if num_classes is None else num_classes
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64), C, split)
