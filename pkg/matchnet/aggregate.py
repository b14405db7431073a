from __future__ import annotations

import numpy as np

from kernels import functional as F
from kernels.layers import Conv2d, Linear
from kernels.tensor import Module, ShapeError


class ResidualConvBlock(Module):
    """
    Aggregates the attended image and radar grids of one view into a d_f vector.

        x  = concat[F̂_I, F̂_R]                     (B, 2C, h, w)
        s  = conv_a(x) + conv_c(leaky(conv_b(x)))
        Φ  = Linear(leaky(Linear(flatten(leaky(s)))))
    """

    def __init__(self, channels: int, h: int, w: int, d_f: int, rng: np.random.Generator):
        super().__init__()
        self.channels, self.h, self.w, self.d_f = channels, h, w, d_f
        self.conv_a = self.child('conv_a', Conv2d(2 * channels, channels, 3, rng, padding=1))
        self.conv_b = self.child('conv_b', Conv2d(2 * channels, channels, 3, rng, padding=1))
        self.conv_c = self.child('conv_c', Conv2d(channels, channels, 3, rng, padding=1))
        self.fc1 = self.child('fc1', Linear(channels * h * w, d_f, rng))
        self.fc2 = self.child('fc2', Linear(d_f, d_f, rng))

    def forward(self, hat_i: np.ndarray, hat_r: np.ndarray):
        expected = (self.channels, self.h, self.w)
        if hat_i.shape != hat_r.shape or hat_i.shape[1:] != expected:
            raise ShapeError(f"residual block expects (B, {expected}) grids, got {hat_i.shape} and {hat_r.shape}")
        x = np.concatenate([hat_i, hat_r], axis=1)
        pa, ca = self.conv_a.forward(x)
        pb, cb = self.conv_b.forward(x)
        pc, cc = self.conv_c.forward(F.leaky_relu(pb))
        s = pa + pc
        flat = F.leaky_relu(s).reshape(s.shape[0], -1)
        u, c1 = self.fc1.forward(flat)
        y, c2 = self.fc2.forward(F.leaky_relu(u))
        return y, (ca, pb, cb, cc, s, u, c1, c2)

    def backward(self, dy: np.ndarray, cache):
        ca, pb, cb, cc, s, u, c1, c2 = cache
        du = F.leaky_relu_backward(self.fc2.backward(dy, c2), u)
        dflat = self.fc1.backward(du, c1)
        ds = F.leaky_relu_backward(dflat.reshape(s.shape), s)
        dx = self.conv_a.backward(ds, ca)
        dpb = F.leaky_relu_backward(self.conv_c.backward(ds, cc), pb)
        dx = dx + self.conv_b.backward(dpb, cb)
        c = self.channels
        return dx[:, :c], dx[:, c:]


def residual_conv_block(block: ResidualConvBlock, hat_i: np.ndarray, hat_r: np.ndarray) -> np.ndarray:
    y, _ = block.forward(hat_i, hat_r)
    return y
