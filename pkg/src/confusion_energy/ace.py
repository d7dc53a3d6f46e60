"""Batch confusion norm, adaptive class weights and the ACE objective.

Conventions: a prediction matrix ``P`` is ``C x M`` with one softmax column
per sample.  The adaptive matrix is diagonal, so it is carried as its
diagonal vector ``a`` of length ``C``.

Because ``P^T A^T A P`` is positive semidefinite its nuclear norm equals its
trace, which is the squared Frobenius norm of ``A P``.  The ``trace_fast``
path uses that identity; ``svd_reference`` evaluates the nuclear norm
literally with the Jacobi SVD and exists for cross-checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import NumericalError, ShapeError, ValidationError
from .linalg import frobenius_norm_sq, nuclear_norm

BcnPath = Literal["svd_reference", "trace_fast"]
BCN_PATHS = ("svd_reference", "trace_fast")

_SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class PredictionBatch:
    P: np.ndarray
    labels: np.ndarray | None = None

    @property
    def num_classes(self) -> int:
        return self.P.shape[0]

    @property
    def batch_size(self) -> int:
        return self.P.shape[1]


@dataclass(frozen=True)
class AdaptiveSpec:
    class_counts: np.ndarray
    tau: float = 0.0

    def __post_init__(self):
        counts = np.asarray(self.class_counts)
        if counts.ndim != 1 or counts.size < 2:
            raise ValidationError("need counts for at least two classes")
        if np.any(counts < 1):
            raise ValidationError(f"every class needs at least one sample, got {counts.tolist()}")
        if not self.tau >= 0:
            raise ValidationError(f"tau must be non-negative, got {self.tau}")
        object.__setattr__(self, "class_counts", counts.astype(np.float64))

    @property
    def mu(self) -> float:
        return float(np.mean(self.class_counts))

    @property
    def sigma(self) -> float:
        # population standard deviation (divide by C)
        return float(np.std(self.class_counts))


@dataclass(frozen=True)
class AdaptiveMatrix:
    diag: np.ndarray
    frozen_reference: np.ndarray

    @classmethod
    def identity(cls, num_classes: int) -> "AdaptiveMatrix":
        return cls(np.ones(num_classes), np.ones(num_classes))

    def with_diag(self, diag) -> "AdaptiveMatrix":
        return AdaptiveMatrix(np.asarray(diag, dtype=np.float64).copy(), self.frozen_reference)


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.0
    eta: float = 1.0
    learnable: bool = False
    bcn_path: BcnPath = "trace_fast"

    def __post_init__(self):
        if not self.lam >= 0 or not self.eta >= 0:
            raise ValidationError("lambda and eta must be non-negative")
        if self.bcn_path not in BCN_PATHS:
            raise ValidationError(f"unknown bcn path {self.bcn_path!r}; expected one of {BCN_PATHS}")


def _pmat(P) -> np.ndarray:
    if isinstance(P, PredictionBatch):
        P = P.P
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ShapeError(f"prediction matrix must be 2-D, got shape {P.shape}")
    return P


def _diag(A, num_classes: int) -> np.ndarray:
    a = A.diag if isinstance(A, AdaptiveMatrix) else np.asarray(A, dtype=np.float64)
    if a.shape != (num_classes,):
        raise ShapeError(f"adaptive diagonal has shape {a.shape}, prediction matrix has {num_classes} classes")
    return a


def assemble_prediction_matrix(softmax_outputs: Sequence, labels: Sequence[int]) -> PredictionBatch:
    """Stack per-sample probability vectors as the columns of ``P``."""
    vecs = [np.asarray(p, dtype=np.float64) for p in softmax_outputs]
    if not vecs:
        raise ShapeError("empty batch")
    shape0 = vecs[0].shape
    if any(v.ndim != 1 or v.shape != shape0 for v in vecs):
        raise ShapeError("all probability vectors must be 1-D with the same length")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(vecs),):
        raise ShapeError(f"got {len(vecs)} vectors but {labels.size} labels")
    P = np.stack(vecs, axis=1)
    if np.any(P < 0) or np.any(P > 1) or np.any(np.abs(P.sum(axis=0) - 1.0) > _SIMPLEX_TOL):
        raise ValidationError("every column of P must be a probability vector")
    if np.any(labels < 0) or np.any(labels >= P.shape[0]):
        raise ValidationError("labels must lie in [0, C)")
    return PredictionBatch(P, labels)


def adaptive_exponent(sigma: float, tau: float) -> float:
    # 0**0 is taken as 1; the base N_i/mu is exactly 1 whenever sigma == 0
    if sigma == 0.0:
        return 1.0 if tau == 0 else 0.0
    return sigma ** tau


def build_adaptive_matrix(spec: AdaptiveSpec) -> AdaptiveMatrix:
    counts = spec.class_counts
    sigma = spec.sigma
    if sigma == 0.0:
        diag = np.ones_like(counts)
    else:
        with np.errstate(over="ignore", under="ignore"):
            diag = (counts / spec.mu) ** adaptive_exponent(sigma, spec.tau)
        if not np.all(np.isfinite(diag) & (diag > 0)):
            raise NumericalError(
                f"adaptive diagonal under/overflows for sigma={sigma:.4g}, tau={spec.tau}; use a smaller tau"
            )
    return AdaptiveMatrix(diag, diag.copy())


def bcn(P, path: BcnPath = "trace_fast") -> float:
    """Batch confusion norm ``||P^T P||_*``."""
    P = _pmat(P)
    if path == "svd_reference":
        return nuclear_norm(P.T @ P)
    if path == "trace_fast":
        return frobenius_norm_sq(P)
    raise ValidationError(f"unknown bcn path {path!r}")


def ace_energy(P, A, path: BcnPath = "trace_fast") -> float:
    """``||P^T A^T A P||_*`` for a diagonal ``A``."""
    P = _pmat(P)
    a = _diag(A, P.shape[0])
    if path == "svd_reference":
        AP = a[:, None] * P
        return nuclear_norm(AP.T @ AP)
    if path == "trace_fast":
        return float(np.dot(a * a, np.sum(P * P, axis=1)))
    raise ValidationError(f"unknown bcn path {path!r}")


def proximity(a_hat, a_ref) -> float:
    """Tether between the learnable and the hand-crafted diagonal.

    Squared elementwise l2 distance; smooth everywhere, including at
    ``a_hat == a_ref``.
    """
    d = np.asarray(a_hat, dtype=np.float64) - np.asarray(a_ref, dtype=np.float64)
    return float(np.dot(d, d))


def proximity_grad(a_hat, a_ref) -> np.ndarray:
    return 2.0 * (np.asarray(a_hat, dtype=np.float64) - np.asarray(a_ref, dtype=np.float64))


def ace_loss_learnable(P, A_hat: AdaptiveMatrix, eta: float, path: BcnPath = "trace_fast") -> float:
    return ace_energy(P, A_hat, path) + eta * proximity(A_hat.diag, A_hat.frozen_reference)


def total_loss(ce: float, ace: float, lam: float) -> float:
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    return ce + lam * ace


def ace_grad_wrt_P(P, A) -> np.ndarray:
    P = _pmat(P)
    a = _diag(A, P.shape[0])
    return 2.0 * (a * a)[:, None] * P


def ace_grad_wrt_Ahat(P, A_hat: AdaptiveMatrix, eta: float) -> np.ndarray:
    P = _pmat(P)
    a = _diag(A_hat, P.shape[0])
    return 2.0 * a * np.sum(P * P, axis=1) + eta * proximity_grad(a, A_hat.frozen_reference)


def softmax_backward(P, G) -> np.ndarray:
    """Pull a gradient w.r.t. softmax columns back to the logits.

    Column-wise ``(diag(p) - p p^T) g``.
    """
    P = _pmat(P)
    G = np.asarray(G, dtype=np.float64)
    if G.shape != P.shape:
        raise ShapeError(f"gradient shape {G.shape} does not match P {P.shape}")
    return P * (G - np.sum(P * G, axis=0, keepdims=True))


def ace_grad_wrt_logits(P, A) -> np.ndarray:
    return softmax_backward(P, ace_grad_wrt_P(P, A))


def softmax_columns(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    E = np.exp(Z - Z.max(axis=0, keepdims=True))
    return E / E.sum(axis=0, keepdims=True)
