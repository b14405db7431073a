"""
Multi-modal cross-attention between image and radar tokens.

Both sides are projected to keys and values; a single score matrix
a_IR = K_I K_Rᵀ drives both directions:

    m_I←R = softmax(a_IR) V_R        m_R←I = softmax(a_IRᵀ) V_I

and each side is updated residually, F̂ = F + Θ([F, m]), with Θ a
LayerNorm → Linear → GELU → Linear network shared by both directions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kernels import functional as F
from kernels.layers import LayerNorm, Linear
from kernels.tensor import Module, ShapeError


class FeedForward(Module):

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.norm = self.child('norm', LayerNorm(2 * channels))
        self.fc1 = self.child('fc1', Linear(2 * channels, 2 * channels, rng))
        # zero output projection makes the block an exact identity at init
        self.fc2 = self.child('fc2', Linear(2 * channels, channels, rng, zero_init=True))

    def forward(self, x: np.ndarray):
        n, c_norm = self.norm.forward(x)
        u, c1 = self.fc1.forward(n)
        g = F.gelu(u)
        y, c2 = self.fc2.forward(g)
        return y, (c_norm, c1, u, c2)

    def backward(self, dy: np.ndarray, cache):
        c_norm, c1, u, c2 = cache
        dg = self.fc2.backward(dy, c2)
        du = F.gelu_backward(dg, u)
        return self.norm.backward(self.fc1.backward(du, c1), c_norm)


@dataclass(frozen=True, eq=False)
class AttentionScores:
    scores: np.ndarray       # a_IR, (B, m, m)
    image_attn: np.ndarray   # softmax(a_IR) over radar tokens
    radar_attn: np.ndarray   # softmax(a_IRᵀ) over image tokens


class CrossAttention(Module):

    def __init__(self, channels: int, rng: np.random.Generator, scaled_scores: bool = False):
        super().__init__()
        self.channels = channels
        self.scale = 1.0 / np.sqrt(channels) if scaled_scores else 1.0
        self.key_i = self.child('key_i', Linear(channels, channels, rng))
        self.value_i = self.child('value_i', Linear(channels, channels, rng))
        self.key_r = self.child('key_r', Linear(channels, channels, rng))
        self.value_r = self.child('value_r', Linear(channels, channels, rng))
        self.ffn = self.child('ffn', FeedForward(channels, rng))

    def forward(self, f_i: np.ndarray, f_r: np.ndarray):
        """Token sets (B, m, c) -> updated (F̂_I, F̂_R), scores, cache."""
        if f_i.shape != f_r.shape or f_i.ndim != 3 or f_i.shape[-1] != self.channels:
            raise ShapeError(f"cross-attention needs matching (B, m, {self.channels}) tokens, "
                             f"got {f_i.shape} and {f_r.shape}")
        k_i, ck_i = self.key_i.forward(f_i)
        v_i, cv_i = self.value_i.forward(f_i)
        k_r, ck_r = self.key_r.forward(f_r)
        v_r, cv_r = self.value_r.forward(f_r)

        a = (k_i @ k_r.transpose(0, 2, 1)) * np.asarray(self.scale, dtype=k_i.dtype)
        attn_i = F.softmax(a, axis=-1)
        attn_r = F.softmax(a.transpose(0, 2, 1), axis=-1)
        m_i = attn_i @ v_r
        m_r = attn_r @ v_i

        o_i, cf_i = self.ffn.forward(np.concatenate([f_i, m_i], axis=-1))
        o_r, cf_r = self.ffn.forward(np.concatenate([f_r, m_r], axis=-1))
        scores = AttentionScores(a, attn_i, attn_r)
        cache = (ck_i, cv_i, ck_r, cv_r, k_i, v_i, k_r, v_r, attn_i, attn_r, cf_i, cf_r)
        return f_i + o_i, f_r + o_r, scores, cache

    def backward(self, d_hat_i: np.ndarray, d_hat_r: np.ndarray, cache):
        ck_i, cv_i, ck_r, cv_r, k_i, v_i, k_r, v_r, attn_i, attn_r, cf_i, cf_r = cache
        c = self.channels
        dcat_i = self.ffn.backward(d_hat_i, cf_i)
        dcat_r = self.ffn.backward(d_hat_r, cf_r)
        df_i = d_hat_i + dcat_i[..., :c]
        df_r = d_hat_r + dcat_r[..., :c]
        dm_i, dm_r = dcat_i[..., c:], dcat_r[..., c:]

        dv_r = attn_i.transpose(0, 2, 1) @ dm_i
        dv_i = attn_r.transpose(0, 2, 1) @ dm_r
        da = F.softmax_backward(dm_i @ v_r.transpose(0, 2, 1), attn_i, axis=-1)
        da = da + F.softmax_backward(dm_r @ v_i.transpose(0, 2, 1), attn_r, axis=-1).transpose(0, 2, 1)
        da = da * self.scale
        dk_i = da @ k_r
        dk_r = da.transpose(0, 2, 1) @ k_i

        df_i = df_i + self.key_i.backward(dk_i, ck_i) + self.value_i.backward(dv_i, cv_i)
        df_r = df_r + self.key_r.backward(dk_r, ck_r) + self.value_r.backward(dv_r, cv_r)
        return df_i, df_r


def mca(block: CrossAttention, f_i: np.ndarray, f_r: np.ndarray):
    """Forward only: (F̂_I, F̂_R, AttentionScores)."""
    hat_i, hat_r, scores, _ = block.forward(f_i, f_r)
    return hat_i, hat_r, scores


def attention_heatmaps(scores: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Peak attention per token in each direction, laid out on the feature grid.

    Accepts an (m, m) or (B, m, m) score matrix and returns (I_I←R, I_R←I)
    with shape (h, w) or (B, h, w); every value lies in (0, 1].
    """
    a = np.asarray(scores, dtype=np.float64)
    single = a.ndim == 2
    if single:
        a = a[None]
    if a.shape[1] != a.shape[2] or a.shape[1] != h * w:
        raise ShapeError(f"scores {a.shape} do not cover a {h}x{w} grid")
    image = F.softmax(a, axis=-1).max(axis=-1).reshape(-1, h, w)
    radar = F.softmax(a.transpose(0, 2, 1), axis=-1).max(axis=-1).reshape(-1, h, w)
    return (image[0], radar[0]) if single else (image, radar)
