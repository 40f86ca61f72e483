"""Small dense kernels and the central-difference gradient harness."""

from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_EPS = 1e-12
DEFAULT_STEP = 1e-4


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.ravel()
    if arr.size == 0:
        raise ValueError("empty vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite entries in vector")
    return arr


def logsumexp(v) -> float:
    """Stable ``log(sum(exp(v)))`` via max subtraction."""
    arr = _as_vector(v)
    m = arr.max()
    return float(m + np.log(np.exp(arr - m).sum()))


def softmax(v) -> np.ndarray:
    arr = _as_vector(v)
    e = np.exp(arr - arr.max())
    return e / e.sum()


def log_softmax(v) -> np.ndarray:
    arr = _as_vector(v)
    return arr - logsumexp(arr)


def l2_normalize(v, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm.

    Vectors with norm at or below ``eps`` are refused instead of being
    mapped to zero, since a silent zero would poison downstream inner
    products.
    """
    arr = _as_vector(v)
    norm = np.linalg.norm(arr)
    if norm <= eps:
        raise ValueError("degenerate vector")
    return arr / norm


def l2_normalize_jvp(v: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. ``v / |v|`` back to a gradient w.r.t. ``v``.

    Works row-wise on 2-D input.
    """
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / norm
    return (g - u * np.sum(g * u, axis=-1, keepdims=True)) / norm


def central_diff_grad(
    f: Callable[[np.ndarray], float], x, h: float = DEFAULT_STEP
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` may be any shape; the result has the same shape.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(x, dtype=np.float64)
    flat = x0.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp.reshape(x0.shape)))
        fm = float(f(xm.reshape(x0.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at component {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x0.shape)


def relative_error(a, b) -> float:
    """Max over components of ``|a-b| / max(1, |a|, |b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))
