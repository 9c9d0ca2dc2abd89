"""Dense matrix primitives: pairwise distances, PSD eigendecomposition,
inverse matrix square root, stable sigmoid, and a finite-difference
gradient checker.

Everything operates on 64-bit numpy arrays and is deterministic for a
fixed input.
"""

from __future__ import annotations

import warnings
from typing import Callable, Tuple

import numpy as np

from .errors import DegenerateInputError, NumericError, ShapeError

__all__ = [
    "pairwise_sq_dists",
    "sym_eig_psd",
    "inv_sqrt_psd",
    "stable_sigmoid",
    "check_gradients",
]


def pairwise_sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``a`` (n x d) and
    ``b`` (m x d), returned as an n x m matrix.

    When ``a`` and ``b`` hold identical data the result is made exactly
    symmetric with an exactly-zero diagonal, so self-Gram matrices are
    bit-reproducible.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"expected 2-D sample matrices, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}"
        )
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)  # cancellation can leave tiny negatives
    if a.shape == b.shape and (a is b or np.array_equal(a, b)):
        upper = np.triu(d2, k=1)
        d2 = upper + upper.T
    return d2


def sym_eig_psd(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns ``(w, v)`` with eigenvalues ``w`` ascending and orthonormal
    eigenvector columns ``v``. The input is symmetrized as (M + M^T)/2
    first, so tiny asymmetries are tolerated.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    sym = 0.5 * (m + m.T)
    try:
        w, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericError(f"eigendecomposition did not converge: {exc}") from exc
    return w, v


def inv_sqrt_psd(m: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    """Inverse matrix square root M^(-1/2) of a symmetric PSD matrix.

    Eigenvalues below ``floor * lambda_max`` are raised to that floor
    before inversion; a RuntimeWarning is emitted when this happens so
    rank-deficient inputs are visible to callers.
    """
    if floor <= 0:
        raise ValueError("floor must be positive")
    w, v = sym_eig_psd(m)
    lam_max = float(w[-1])
    if lam_max <= 0.0:
        raise DegenerateInputError("matrix has no positive eigenvalues")
    lam_floor = floor * lam_max
    if np.any(w < lam_floor):
        warnings.warn(
            "rank-deficient matrix: eigenvalues raised to floor before inversion",
            RuntimeWarning,
            stacklevel=2,
        )
        w = np.maximum(w, lam_floor)
    out = (v / np.sqrt(w)) @ v.T
    return 0.5 * (out + out.T)


def stable_sigmoid(x):
    """Overflow-free logistic function, elementwise on arrays."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def check_gradients(
    loss: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    theta: np.ndarray,
    step: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central finite differences.

    ``loss(theta)`` must return ``(value, gradient)`` where the gradient
    has the same shape as ``theta``. Returns the maximum relative error

        max_i |g_i - fd_i| / max(1e-8, |g_i| + |fd_i|).
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    _, grad = loss(theta)
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.shape != theta.shape:
        raise ShapeError(
            f"gradient shape {grad.shape} does not match parameters {theta.shape}"
        )
    fd = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += step
        lp = loss(tp)[0]
        tm = theta.copy()
        tm[i] -= step
        lm = loss(tm)[0]
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise NumericError(f"non-finite loss when perturbing coordinate {i}")
        fd[i] = (lp - lm) / (2.0 * step)
    denom = np.maximum(1e-8, np.abs(grad) + np.abs(fd))
    return float(np.max(np.abs(grad - fd) / denom))
