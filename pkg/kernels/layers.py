"""
Parametrised layers with exact backward passes.

Every layer follows the same contract:

    y, cache = layer.forward(x)
    dx = layer.backward(dy, cache)     # accumulates parameter gradients

Batched layouts: images are (B, C, H, W), token sets (B, m, c), vectors (B, d).
Products run in float64 and are cast back to the working dtype (float32 for
training, float64 when a gradient check promotes the module).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import functional as F
from .tensor import Module, ShapeError, check_shape


def _dtype(*arrays):
    return np.result_type(*arrays)


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


# ─────────────────────────────────────────────────────────────────────────────
# Linear
# ─────────────────────────────────────────────────────────────────────────────

class Linear(Module):
    """y = x W + b over the last axis. W is (c_in, c_out)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, zero_init: bool = False):
        super().__init__()
        bound = 1.0 / np.sqrt(c_in)
        self.c_in, self.c_out = c_in, c_out
        self.weight = self.param('weight', np.zeros((c_in, c_out)) if zero_init else _uniform(rng, bound, (c_in, c_out)))
        self.bias = self.param('bias', np.zeros(c_out) if zero_init else _uniform(rng, bound, c_out))

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"linear expects last axis {self.c_in}, got {x.shape}")
        dtype = _dtype(x, self.weight.data)
        y = x.astype(np.float64) @ self.weight.data.astype(np.float64) + self.bias.data
        return y.astype(dtype), x

    def backward(self, dy: np.ndarray, x):
        x2 = x.reshape(-1, self.c_in).astype(np.float64)
        dy2 = dy.reshape(-1, self.c_out).astype(np.float64)
        self.weight.accumulate(x2.T @ dy2)
        self.bias.accumulate(dy2.sum(axis=0))
        dx = dy2 @ self.weight.data.astype(np.float64).T
        return dx.reshape(x.shape).astype(_dtype(x, dy))


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Functional form: y = xW + b."""
    if x.shape[-1] != w.shape[0] or w.shape[1] != np.shape(b)[-1]:
        raise ShapeError(f"linear: x {x.shape}, w {w.shape}, b {np.shape(b)} disagree")
    return (x.astype(np.float64) @ w.astype(np.float64) + b).astype(_dtype(x, w))


# ─────────────────────────────────────────────────────────────────────────────
# Conv2d
# ─────────────────────────────────────────────────────────────────────────────

class Conv2d(Module):
    """Square-kernel convolution (cross-correlation) with zero padding."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        if stride < 1 or kernel < 1 or padding < 0:
            raise ShapeError(f"invalid conv geometry: kernel={kernel} stride={stride} padding={padding}")
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.weight = self.param('weight', _uniform(rng, bound, (c_out, c_in, kernel, kernel)))
        self.bias = self.param('bias', _uniform(rng, bound, c_out))

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"kernel {k} does not fit a {h}x{w} input with padding {p}")
        return ho, wo

    def forward(self, x: np.ndarray):
        check_shape('conv input', x, (None, self.c_in, None, None))
        ho, wo = self.output_shape(x.shape[2], x.shape[3])
        p, s = self.padding, self.stride
        xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (p, p), (p, p)))
        windows = sliding_window_view(xp, (self.kernel, self.kernel), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        y = np.einsum('bchwij,ocij->bohw', windows, self.weight.data.astype(np.float64), optimize=True)
        y += self.bias.data[None, :, None, None]
        return y.astype(_dtype(x, self.weight.data)), (x.shape, x.dtype, windows)

    def backward(self, dy: np.ndarray, cache):
        shape, dtype, windows = cache
        k, s, p = self.kernel, self.stride, self.padding
        dy64 = dy.astype(np.float64)
        _, _, ho, wo = dy.shape
        self.weight.accumulate(np.einsum('bchwij,bohw->ocij', windows, dy64, optimize=True))
        self.bias.accumulate(dy64.sum(axis=(0, 2, 3)))
        dcols = np.einsum('bohw,ocij->bchwij', dy64, self.weight.data.astype(np.float64), optimize=True)
        b, c, h, w = shape
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[..., i, j]
        return dxp[:, :, p:p + h, p:p + w].astype(_dtype(dtype, dy))


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Functional convolution on a single (C, H, W) or batched (B, C, H, W) input."""
    single = x.ndim == 3
    xb = x[None] if single else x
    c_out, c_in, k, _ = weight.shape
    layer = Conv2d(c_in, c_out, k, np.random.default_rng(0), stride, padding).astype(_dtype(x, weight))
    layer.weight.data = weight
    layer.bias.data = np.zeros(c_out) if bias is None else bias
    y, _ = layer.forward(xb)
    return y[0] if single else y


# ─────────────────────────────────────────────────────────────────────────────
# Normalisation
# ─────────────────────────────────────────────────────────────────────────────

class LayerNorm(Module):
    """Normalises the last axis; affine γ=1, β=0 at init."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.gamma = self.param('gamma', np.ones(dim))
        self.beta = self.param('beta', np.zeros(dim))

    def forward(self, x: np.ndarray):
        x64 = x.astype(np.float64)
        mean = x64.mean(axis=-1, keepdims=True)
        var = x64.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x64 - mean) * inv_std
        y = xhat * self.gamma.data + self.beta.data
        return y.astype(_dtype(x, self.gamma.data)), (xhat, inv_std, x.dtype)

    def backward(self, dy: np.ndarray, cache):
        xhat, inv_std, dtype = cache
        dy64 = dy.astype(np.float64)
        self.gamma.accumulate((dy64 * xhat).reshape(-1, self.dim).sum(axis=0))
        self.beta.accumulate(dy64.reshape(-1, self.dim).sum(axis=0))
        dxhat = dy64 * self.gamma.data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx.astype(_dtype(dtype, dy))


def layer_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalisation without the affine step."""
    x64 = x.astype(np.float64)
    return ((x64 - x64.mean(axis=-1, keepdims=True)) / np.sqrt(x64.var(axis=-1, keepdims=True) + eps)).astype(x.dtype)


class BatchNorm1d(Module):
    """
    Batch statistics while training, running statistics in eval mode. The
    running buffers are non-trainable parameters so they travel with checkpoints.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.dim, self.momentum, self.eps = dim, momentum, eps
        self.gamma = self.param('gamma', np.ones(dim))
        self.beta = self.param('beta', np.zeros(dim))
        self.running_mean = self.param('running_mean', np.zeros(dim), trainable=False)
        self.running_var = self.param('running_var', np.ones(dim), trainable=False)

    def forward(self, x: np.ndarray, update_stats: bool = True):
        check_shape('batch norm input', x, (None, self.dim))
        x64 = x.astype(np.float64)
        if self.training:
            mean = x64.mean(axis=0)
            var = x64.var(axis=0)
            if update_stats:
                m = self.momentum
                n = x.shape[0]
                unbiased = var * n / (n - 1) if n > 1 else var
                self.running_mean.data = (1 - m) * self.running_mean.data + m * mean
                self.running_var.data = (1 - m) * self.running_var.data + m * unbiased
        else:
            mean = self.running_mean.data.astype(np.float64)
            var = self.running_var.data.astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x64 - mean) * inv_std
        y = xhat * self.gamma.data + self.beta.data
        return y.astype(_dtype(x, self.gamma.data)), (xhat, inv_std, self.training, x.dtype)

    def backward(self, dy: np.ndarray, cache):
        xhat, inv_std, training, dtype = cache
        dy64 = dy.astype(np.float64)
        self.gamma.accumulate((dy64 * xhat).sum(axis=0))
        self.beta.accumulate(dy64.sum(axis=0))
        dxhat = dy64 * self.gamma.data
        if training:
            dx = inv_std * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
        else:
            dx = dxhat * inv_std
        return dx.astype(_dtype(dtype, dy))


# ─────────────────────────────────────────────────────────────────────────────
# LSTM
# ─────────────────────────────────────────────────────────────────────────────

class LSTMCell(Module):
    """
    Single LSTM step, gates stacked as [i, f, o, g]:

        c' = f·c + i·g,   h' = o·tanh(c')
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / np.sqrt(hidden_size)
        self.input_size, self.hidden_size = input_size, hidden_size
        self.wx = self.param('wx', _uniform(rng, bound, (input_size, 4 * hidden_size)))
        self.wh = self.param('wh', _uniform(rng, bound, (hidden_size, 4 * hidden_size)))
        b = _uniform(rng, bound, 4 * hidden_size)
        b[hidden_size:2 * hidden_size] += 1.0  # forget gate starts open
        self.b = self.param('b', b)

    def initial_state(self, batch: int, dtype=np.float32):
        zeros = np.zeros((batch, self.hidden_size), dtype=dtype)
        return zeros, zeros.copy()

    def forward(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        check_shape('lstm input', x, (None, self.input_size))
        check_shape('lstm hidden', h, (x.shape[0], self.hidden_size))
        check_shape('lstm cell', c, (x.shape[0], self.hidden_size))
        hs = self.hidden_size
        dtype = _dtype(x, h, self.wx.data)
        z = (x.astype(np.float64) @ self.wx.data.astype(np.float64)
             + h.astype(np.float64) @ self.wh.data.astype(np.float64) + self.b.data)
        i = F.sigmoid(z[:, :hs])
        f = F.sigmoid(z[:, hs:2 * hs])
        o = F.sigmoid(z[:, 2 * hs:3 * hs])
        g = np.tanh(z[:, 3 * hs:])
        c64 = c.astype(np.float64)
        c_next = f * c64 + i * g
        tanh_c = np.tanh(c_next)
        h_next = o * tanh_c
        cache = (x, h, c64, i, f, o, g, tanh_c)
        return h_next.astype(dtype), c_next.astype(dtype), cache

    def backward(self, dh_next: np.ndarray, dc_next: np.ndarray, cache):
        x, h, c, i, f, o, g, tanh_c = cache
        dh_next = dh_next.astype(np.float64)
        do = dh_next * tanh_c
        dc = dc_next.astype(np.float64) + dh_next * o * (1.0 - tanh_c ** 2)
        di = dc * g
        df = dc * c
        dg = dc * i
        dz = np.hstack((i * (1 - i) * di, f * (1 - f) * df, o * (1 - o) * do, (1 - g ** 2) * dg))
        self.wx.accumulate(x.astype(np.float64).T @ dz)
        self.wh.accumulate(h.astype(np.float64).T @ dz)
        self.b.accumulate(dz.sum(axis=0))
        dx = dz @ self.wx.data.astype(np.float64).T
        dh = dz @ self.wh.data.astype(np.float64).T
        dc_prev = dc * f
        dtype = _dtype(x, self.wx.data)
        return dx.astype(dtype), dh.astype(dtype), dc_prev.astype(dtype)


def lstm_cell(x: np.ndarray, h: np.ndarray, c: np.ndarray, params: dict) -> tuple[np.ndarray, np.ndarray]:
    """Functional step with params {'wx', 'wh', 'b'} in `LSTMCell` layout; returns (h', c')."""
    wx = np.asarray(params['wx'])
    cell = LSTMCell(wx.shape[0], wx.shape[1] // 4, np.random.default_rng(0)).astype(_dtype(x, wx))
    cell.load_state_dict(params)
    h_next, c_next, _ = cell.forward(x, h, c)
    return h_next, c_next
