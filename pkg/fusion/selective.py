"""
Channel-wise selection between the BEV and FV branch vectors.

    z      = leaky(BN(Linear(F_BEV + F_FV)))
    a_bev  = softmax over the two branches of (head_bev(z), head_fv(z))
    F_sel  = a_bev ⊙ F_BEV + (1 - a_bev) ⊙ F_FV

A two-way softmax is a sigmoid of the logit difference, which is how it is
computed here.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from kernels import functional as F
from kernels.layers import BatchNorm1d, Linear
from kernels.tensor import Module, ShapeError

FusionMode = Literal['selective', 'add', 'concat']
FUSION_MODES = ('selective', 'add', 'concat')


@dataclass(frozen=True, eq=False)
class FusionWeights:
    a_bev: np.ndarray  # (B, d_f)
    a_fv: np.ndarray


class SelectiveFusion(Module):

    def __init__(self, d_f: int, rng: np.random.Generator):
        super().__init__()
        self.d_f = d_f
        self.fc = self.child('fc', Linear(d_f, d_f, rng))
        self.bn = self.child('bn', BatchNorm1d(d_f))
        self.head_bev = self.child('head_bev', Linear(d_f, d_f, rng))
        self.head_fv = self.child('head_fv', Linear(d_f, d_f, rng))

    def forward(self, f_bev: np.ndarray, f_fv: np.ndarray, update_stats: bool = True):
        if f_bev.shape != f_fv.shape or f_bev.ndim != 2 or f_bev.shape[1] != self.d_f:
            raise ShapeError(f"selective fusion needs matching (B, {self.d_f}) inputs, got {f_bev.shape} and {f_fv.shape}")
        u, c_fc = self.fc.forward(f_bev + f_fv)
        v, c_bn = self.bn.forward(u, update_stats=update_stats)
        z = F.leaky_relu(v)
        l_bev, c_hb = self.head_bev.forward(z)
        l_fv, c_hf = self.head_fv.forward(z)
        a_bev = F.sigmoid(l_bev - l_fv)
        a_fv = 1.0 - a_bev
        out = a_bev * f_bev + a_fv * f_fv
        cache = (f_bev, f_fv, c_fc, c_bn, v, c_hb, c_hf, a_bev, a_fv)
        return out, FusionWeights(a_bev, a_fv), cache

    def backward(self, dy: np.ndarray, cache):
        f_bev, f_fv, c_fc, c_bn, v, c_hb, c_hf, a_bev, a_fv = cache
        d_bev = dy * a_bev
        d_fv = dy * a_fv
        d_logit = F.sigmoid_backward(dy * (f_bev - f_fv), a_bev)
        dz = self.head_bev.backward(d_logit, c_hb) + self.head_fv.backward(-d_logit, c_hf)
        ds = self.fc.backward(self.bn.backward(F.leaky_relu_backward(dz, v), c_bn), c_fc)
        return d_bev + ds, d_fv + ds


def fuse(mode: FusionMode, fusion: SelectiveFusion | None, f_bev: np.ndarray, f_fv: np.ndarray,
         update_stats: bool = True):
    """Apply one of the fusion strategies; returns (F, weights or None, cache)."""
    if mode == 'selective':
        return fusion.forward(f_bev, f_fv, update_stats)
    if mode == 'add':
        return f_bev + f_fv, None, None
    if mode == 'concat':
        return np.concatenate([f_bev, f_fv], axis=1), None, None
    raise ValueError(f"Unknown fusion mode: {mode}")


def fuse_backward(mode: FusionMode, fusion: SelectiveFusion | None, dy: np.ndarray, cache):
    if mode == 'selective':
        return fusion.backward(dy, cache)
    if mode == 'add':
        return dy, dy
    d_f = dy.shape[1] // 2
    return dy[:, :d_f], dy[:, d_f:]


def selective_fusion(fusion: SelectiveFusion, f_bev: np.ndarray, f_fv: np.ndarray):
    out, weights, _ = fusion.forward(f_bev, f_fv, update_stats=False)
    return out, weights
