"""Dense linear algebra helpers and a one-sided Jacobi SVD.

Matrices are plain two-dimensional ``float64`` numpy arrays.  Products and
norms delegate to numpy; the singular value decomposition is a Hestenes
one-sided Jacobi iteration with a round-robin pair schedule, so every
rotation within a round touches disjoint columns and can be applied at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SvdConvergenceError, ValidationError

MAX_SWEEPS = 60
ROTATION_TOL = 1e-12


def as_matrix(a) -> np.ndarray:
    """Coerce ``a`` to a 2-D float64 array, rejecting other ranks."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"matrix must be non-empty, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(a).T)


def frobenius_norm_sq(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sum(a * a))


@dataclass(frozen=True)
class SvdResult:
    singular_values: np.ndarray
    left_vectors: np.ndarray | None = None
    right_vectors: np.ndarray | None = None


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule covering every column pair once per sweep."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        p, q = [], []
        for i in range(k // 2):
            a, b = players[i], players[k - 1 - i]
            if a >= 0 and b >= 0:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns of ``u`` not in ``keep`` with an orthonormal completion."""
    m, n = u.shape
    good = u[:, keep]
    q, _ = np.linalg.qr(np.hstack([good, np.eye(m)]))
    # the leading columns of q span ``good``; only the complement is used
    out = u.copy()
    filler = iter(range(good.shape[1], m))
    for j in range(n):
        if not keep[j]:
            out[:, j] = q[:, next(filler)]
    return out


def _jacobi_tall(a: np.ndarray, want_vectors: bool):
    m, n = a.shape
    # Rows of ``w`` hold the working columns so pair updates stay contiguous.
    w = a.T.copy()
    v = np.eye(n) if want_vectors else None
    schedule = _round_robin(n)
    # columns this small are round-off residue of a zero singular value
    negligible = (np.finfo(np.float64).eps * np.sqrt(np.sum(a * a))) ** 2
    residual = 0.0
    for _ in range(MAX_SWEEPS):
        rotated = False
        residual = 0.0
        for p, q in schedule:
            if p.size == 0:
                continue
            wp, wq = w[p], w[q]
            alpha = np.einsum("ij,ij->i", wp, wp)
            beta = np.einsum("ij,ij->i", wq, wq)
            gamma = np.einsum("ij,ij->i", wp, wq)
            scale = np.sqrt(alpha * beta)
            live = (alpha > negligible) & (beta > negligible)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(live, np.abs(gamma) / scale, 0.0)
            residual = max(residual, float(rel.max()))
            active = rel > ROTATION_TOL
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            wp, wq = w[p], w[q]
            w[p] = c[:, None] * wp - s[:, None] * wq
            w[q] = s[:, None] * wp + c[:, None] * wq
            if want_vectors:
                vp, vq = v[:, p], v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        raise SvdConvergenceError(MAX_SWEEPS, residual)

    sigma = np.sqrt(np.einsum("ij,ij->i", w, w))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    if not want_vectors:
        return sigma, None, None
    w = w[order]
    v = v[:, order]
    floor = sigma[0] * max(m, n) * np.finfo(np.float64).eps if sigma[0] > 0 else 0.0
    keep = sigma > floor
    u = np.zeros((m, n))
    u[:, keep] = (w[keep] / sigma[keep, None]).T
    if not keep.all():
        u = _complete_basis(u, keep)
    return sigma, u, v


def svd(a, want_vectors: bool = False) -> SvdResult:
    """Thin SVD ``a = U diag(s) V^T`` with ``s`` sorted descending.

    Raises :class:`SvdConvergenceError` if some column pair still needs a
    rotation after ``MAX_SWEEPS`` sweeps.
    """
    a = as_matrix(a)
    if not np.all(np.isfinite(a)):
        raise ValidationError("svd input contains non-finite entries")
    m, n = a.shape
    if m >= n:
        s, u, v = _jacobi_tall(a, want_vectors)
        return SvdResult(s, u, v)
    s, u, v = _jacobi_tall(a.T, want_vectors)
    return SvdResult(s, v, u)


def nuclear_norm(a) -> float:
    return float(np.sum(svd(a).singular_values))
