"""
Explicit matching head.

    S      = proj(f̂_I) proj(f̂_R)ᵀ
    σ_*    = sigmoid(score(f̂_*))
    P_ij   = σ_I^i σ_R^j · softmax_j(S)_ij · softmax_i(S)_ij

Everything is kept in the log domain so the matching loss never takes the log
of an underflowed product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kernels import functional as F
from kernels.layers import Linear
from kernels.tensor import Module, ShapeError


@dataclass(frozen=True, eq=False)
class MatchHeadOutput:
    log_p: np.ndarray            # (..., m, m)
    log_not_sigma_i: np.ndarray  # log(1 - σ_I), (..., m)
    log_not_sigma_r: np.ndarray  # log(1 - σ_R), (..., m)
    sigma_i: np.ndarray
    sigma_r: np.ndarray
    scores: np.ndarray | None = None

    @property
    def p(self) -> np.ndarray:
        return np.exp(self.log_p.astype(np.float64))

    def sample(self, b: int) -> MatchHeadOutput:
        return MatchHeadOutput(
            self.log_p[b], self.log_not_sigma_i[b], self.log_not_sigma_r[b],
            self.sigma_i[b], self.sigma_r[b], None if self.scores is None else self.scores[b],
        )

    @classmethod
    def from_probabilities(cls, p, sigma_i, sigma_r) -> MatchHeadOutput:
        p, sigma_i, sigma_r = (np.asarray(a, dtype=np.float64) for a in (p, sigma_i, sigma_r))
        return cls(F.clamped_log(p), F.clamped_log(1.0 - sigma_i), F.clamped_log(1.0 - sigma_r), sigma_i, sigma_r)


class MatchHead(Module):

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.channels = channels
        self.proj = self.child('proj', Linear(channels, channels, rng))
        self.score = self.child('score', Linear(channels, 1, rng))

    def forward(self, hat_i: np.ndarray, hat_r: np.ndarray):
        if hat_i.shape != hat_r.shape or hat_i.shape[-1] != self.channels:
            raise ShapeError(f"match head expects equal (B, m, {self.channels}) tokens, got {hat_i.shape} and {hat_r.shape}")
        p_i, cp_i = self.proj.forward(hat_i)
        p_r, cp_r = self.proj.forward(hat_r)
        s = p_i @ p_r.transpose(0, 2, 1)
        z_i, cz_i = self.score.forward(hat_i)
        z_r, cz_r = self.score.forward(hat_r)
        z_i, z_r = z_i[..., 0], z_r[..., 0]

        row = F.log_softmax(s, axis=-1)
        col = F.log_softmax(s, axis=-2)
        log_p = F.log_sigmoid(z_i)[:, :, None] + F.log_sigmoid(z_r)[:, None, :] + row + col
        out = MatchHeadOutput(
            log_p=log_p,
            log_not_sigma_i=F.log_sigmoid(-z_i),
            log_not_sigma_r=F.log_sigmoid(-z_r),
            sigma_i=F.sigmoid(z_i),
            sigma_r=F.sigmoid(z_r),
            scores=s,
        )
        return out, (cp_i, cp_r, p_i, p_r, cz_i, cz_r, z_i, z_r, row, col)

    def backward(self, d_log_p: np.ndarray, d_not_i: np.ndarray, d_not_r: np.ndarray, cache):
        cp_i, cp_r, p_i, p_r, cz_i, cz_r, z_i, z_r, row, col = cache
        ds = F.log_softmax_backward(d_log_p, row, axis=-1) + F.log_softmax_backward(d_log_p, col, axis=-2)
        dz_i = F.log_sigmoid_backward(d_log_p.sum(axis=-1), z_i) - F.log_sigmoid_backward(d_not_i, -z_i)
        dz_r = F.log_sigmoid_backward(d_log_p.sum(axis=-2), z_r) - F.log_sigmoid_backward(d_not_r, -z_r)

        dp_i = ds @ p_r
        dp_r = ds.transpose(0, 2, 1) @ p_i
        dh_i = self.proj.backward(dp_i, cp_i) + self.score.backward(dz_i[..., None], cz_i)
        dh_r = self.proj.backward(dp_r, cp_r) + self.score.backward(dz_r[..., None], cz_r)
        return dh_i, dh_r


def match_head(head: MatchHead, hat_i: np.ndarray, hat_r: np.ndarray) -> MatchHeadOutput:
    out, _ = head.forward(hat_i, hat_r)
    return out
