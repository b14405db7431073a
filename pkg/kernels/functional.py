"""
Stateless activations with hand-written backward passes.

Each op is a pair: `op(x) -> y` and `op_backward(dy, ...) -> dx`, where the
backward takes whatever the forward already produced. Reductions (softmax
normalizers) accumulate in float64 and cast back to the input dtype.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf

LEAKY_SLOPE = 0.01
LOG_EPS = 1e-12
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0, x, x * slope).astype(x.dtype, copy=False)


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0, dy, dy * slope).astype(dy.dtype, copy=False)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """log σ(x) = -softplus(-x), finite for every finite x."""
    return -(np.maximum(-x, 0) + np.log1p(np.exp(-np.abs(x))))


def log_sigmoid_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * sigmoid(-x)


def tanh_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * (1.0 - y * y)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, x·Φ(x)."""
    x64 = x.astype(np.float64)
    return (0.5 * x64 * (1.0 + erf(x64 / _SQRT2))).astype(x.dtype)


def gelu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    x64 = x.astype(np.float64)
    cdf = 0.5 * (1.0 + erf(x64 / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x64 * x64)
    return (dy * (cdf + x64 * pdf)).astype(dy.dtype)


# ─────────────────────────────────────────────────────────────────────────────
# Softmax family
# ─────────────────────────────────────────────────────────────────────────────

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x.astype(np.float64) - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)


def softmax_backward(dy: np.ndarray, y: np.ndarray, axis: int = -1) -> np.ndarray:
    inner = np.sum(dy.astype(np.float64) * y, axis=axis, keepdims=True)
    return (y * (dy - inner)).astype(dy.dtype)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x.astype(np.float64) - np.max(x, axis=axis, keepdims=True)
    return (shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))).astype(x.dtype)


def log_softmax_backward(dy: np.ndarray, log_y: np.ndarray, axis: int = -1) -> np.ndarray:
    total = np.sum(dy.astype(np.float64), axis=axis, keepdims=True)
    return (dy - np.exp(log_y.astype(np.float64)) * total).astype(dy.dtype)


def clamped_log(p, floor: float = LOG_EPS):
    return np.log(np.maximum(p, floor))
