"""Adaptive confusion energy: a batch-level confusion regularizer with
per-class weights, plus the tooling to study it on synthetic data."""

__version__ = "0.1.0"

from .ace import (
    AdaptiveMatrix,
    AdaptiveSpec,
    LossConfig,
    PredictionBatch,
    ace_energy,
    ace_grad_wrt_Ahat,
    ace_grad_wrt_logits,
    ace_grad_wrt_P,
    ace_loss_learnable,
    assemble_prediction_matrix,
    bcn,
    build_adaptive_matrix,
    total_loss,
)
from .errors import (
    AceError,
    DivergenceError,
    NumericalError,
    ParseError,
    ShapeError,
    SvdConvergenceError,
    ValidationError,
)
from .linalg import frobenius_norm_sq, matmul, nuclear_norm, svd, transpose

__all__ = [
    "AceError",
    "AdaptiveMatrix",
    "AdaptiveSpec",
    "DivergenceError",
    "LossConfig",
    "NumericalError",
    "ParseError",
    "PredictionBatch",
    "ShapeError",
    "SvdConvergenceError",
    "ValidationError",
    "ace_energy",
    "ace_grad_wrt_Ahat",
    "ace_grad_wrt_P",
    "ace_grad_wrt_logits",
    "ace_loss_learnable",
    "assemble_prediction_matrix",
    "bcn",
    "build_adaptive_matrix",
    "frobenius_norm_sq",
    "matmul",
    "nuclear_norm",
    "svd",
    "total_loss",
    "transpose",
]
