"""Small batched linear-algebra helpers shared by the filters."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

LOG_2PI = float(np.log(2.0 * np.pi))


def symmetrize(a: NDArray) -> NDArray:
    """Return ``(a + a^T) / 2`` over the last two axes."""
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def chol_logdet(a: NDArray) -> NDArray:
    """Log-determinant of symmetric PSD matrices via Cholesky.

    Works on a single matrix or a stack. Matrices whose factorization fails
    (singular or indefinite) get ``-inf``; callers decide whether that is an
    error.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 1:
        d = a[..., 0, 0]
        return np.log(d, out=np.full(d.shape, -np.inf), where=d > 0)
    single = a.ndim == 2
    stack = a[None] if single else a
    try:
        out = 2.0 * np.log(np.diagonal(np.linalg.cholesky(stack), axis1=-2, axis2=-1)).sum(-1)
    except np.linalg.LinAlgError:
        out = np.empty(stack.shape[0])
        for idx, mat in enumerate(stack):
            try:
                out[idx] = 2.0 * np.log(np.diag(np.linalg.cholesky(mat))).sum()
            except np.linalg.LinAlgError:
                out[idx] = -np.inf
    return out[0] if single else out


def is_psd(a: NDArray, tol: float = 1e-10) -> bool:
    """True when every matrix in ``a`` has eigenvalues >= -tol (scaled)."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return True
    eig = np.linalg.eigvalsh(symmetrize(a))
    scale = np.maximum(1.0, np.abs(eig).max(axis=-1, keepdims=True))
    return bool(np.all(eig >= -tol * scale))


def matvec(a: NDArray, x: NDArray) -> NDArray:
    """Batched matrix-vector product ``a @ x`` with ``x`` shaped (..., n)."""
    return np.einsum("...ij,...j->...i", a, x)


def quad_form(a: NDArray, x: NDArray) -> NDArray:
    """Batched ``x^T a x``."""
    return np.einsum("...i,...ij,...j->...", x, a, x)


def log_sum_exp(a: NDArray) -> float:
    """``ln sum exp(a)`` of a 1-D array; ``-inf`` for an empty or all ``-inf`` input."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return -np.inf
    top = a.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(a - top).sum()))
