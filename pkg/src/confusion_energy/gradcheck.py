"""Central finite-difference checks for every analytic gradient."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import ace
from .model import backward, cross_entropy, forward, init_params
from .streams import stream
from .train import pc_grad_wrt_P, pc_loss

STEP = 1e-6
TOLERANCE = 1e-5
FAMILIES = ("ace_grad_wrt_P", "ace_grad_wrt_Ahat", "ace_grad_wrt_logits", "pc_grad_wrt_logits", "model_backward")


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    # C order so the flat views below alias the arrays
    x = np.array(x, dtype=np.float64, order="C")
    g = np.zeros(x.shape)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric) -> float:
    """Largest entry-wise discrepancy relative to the gradient's scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def _instance(rng, trial):
    # trial 0 is a single-sample batch
    M = 1 if trial == 0 else int(rng.integers(1, 17))
    C = int(rng.integers(2, 13))
    Z = rng.normal(scale=2.0, size=(C, M))
    a_ref = rng.uniform(0.2, 3.0, size=C)
    a_hat = a_ref + rng.normal(scale=0.3, size=C)
    return Z, a_ref, a_hat


def check_ace_P(rng, trial) -> float:
    Z, a_ref, _ = _instance(rng, trial)
    P = ace.softmax_columns(Z)
    return relative_error(ace.ace_grad_wrt_P(P, a_ref), numeric_grad(lambda q: ace.ace_energy(q, a_ref), P))


def check_ace_Ahat(rng, trial) -> float:
    Z, a_ref, a_hat = _instance(rng, trial)
    P = ace.softmax_columns(Z)
    eta = float(rng.uniform(0.0, 3.0))
    A_hat = ace.AdaptiveMatrix(a_hat, a_ref)
    f = lambda d: ace.ace_loss_learnable(P, A_hat.with_diag(d), eta)
    return relative_error(ace.ace_grad_wrt_Ahat(P, A_hat, eta), numeric_grad(f, a_hat))


def check_ace_logits(rng, trial) -> float:
    Z, a_ref, _ = _instance(rng, trial)
    analytic = ace.ace_grad_wrt_logits(ace.softmax_columns(Z), a_ref)
    return relative_error(analytic, numeric_grad(lambda z: ace.ace_energy(ace.softmax_columns(z), a_ref), Z))


def check_pc_logits(rng, trial) -> float:
    Z, _, _ = _instance(rng, trial)
    if Z.shape[1] < 2:
        Z = np.hstack([Z, rng.normal(size=(Z.shape[0], 1))])
    labels = rng.integers(0, Z.shape[0], size=Z.shape[1])
    P = ace.softmax_columns(Z)
    analytic = ace.softmax_backward(P, pc_grad_wrt_P(P, labels))
    return relative_error(analytic, numeric_grad(lambda z: pc_loss(ace.softmax_columns(z), labels), Z))


def check_model(rng, trial) -> float:
    """Full objective CE + lam * ACE through every layer of the network."""
    arch = "linear" if trial % 2 else "mlp"
    C, d, M = 3, 4, 1 if trial == 0 else 5
    params = init_params(d, C, rng, arch, hidden=6)
    params.layers = [(W, rng.normal(scale=0.1, size=b.shape)) for W, b in params.layers]
    X = rng.normal(size=(M, d))
    y = rng.integers(0, C, size=M)
    # trial 1 exercises the pure cross-entropy path
    lam = 0.0 if trial == 1 else float(rng.uniform(0.1, 5.0))
    learnable = bool(trial % 3 == 0)
    A_hat = ace.AdaptiveMatrix(rng.uniform(0.3, 2.0, C), rng.uniform(0.3, 2.0, C))
    eta = 1.0

    def loss(p):
        batch, _ = forward(p, X, y)
        reg = ace.ace_loss_learnable(batch, A_hat, eta) if learnable else ace.ace_energy(batch, A_hat)
        return cross_entropy(batch, y) + lam * reg

    batch, cache = forward(params, X, y)
    grads = backward(params, cache, y, ace.ace_grad_wrt_logits(batch, A_hat), lam)
    worst = 0.0
    for li, (W, b) in enumerate(params.layers):
        for which, arr in ((0, W), (1, b)):
            def f(v, li=li, which=which):
                p = params.copy()
                layer = list(p.layers[li])
                layer[which] = v
                p.layers[li] = tuple(layer)
                return loss(p)

            worst = max(worst, relative_error(grads[li][which], numeric_grad(f, arr)))
    return worst


CHECKS = {
    "ace_grad_wrt_P": check_ace_P,
    "ace_grad_wrt_Ahat": check_ace_Ahat,
    "ace_grad_wrt_logits": check_ace_logits,
    "pc_grad_wrt_logits": check_pc_logits,
    "model_backward": check_model,
}


def run_grad_check(seed: int = 0, trials: int = 100) -> dict[str, float]:
    """Max relative error per gradient family over ``trials`` random instances."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    out = {}
    for name in FAMILIES:
        rng = stream(seed, f"gradcheck.{name}")
        out[name] = max(CHECKS[name](rng, t) for t in range(trials))
    return out
