"""
Autoregressive 6-DoF head: one LSTM step per calibration iteration, then two
linear heads for the rotation vector and the translation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geometry.transforms import RigidTransform
from kernels.layers import Linear, LSTMCell
from kernels.tensor import Module


@dataclass(frozen=True, eq=False)
class CalibStep:
    rot_vec: np.ndarray  # (3,) radians·axis
    trans: np.ndarray    # (3,) meters

    def transform(self) -> RigidTransform:
        return RigidTransform.from_rotvec(self.rot_vec, self.trans)


@dataclass(frozen=True, eq=False)
class HiddenState:
    h: np.ndarray  # (B, hidden)
    c: np.ndarray

    def as_tensors(self, prefix='hidden') -> dict[str, np.ndarray]:
        return {f"{prefix}.h": self.h, f"{prefix}.c": self.c}

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix='hidden') -> HiddenState:
        return cls(tensors[f"{prefix}.h"], tensors[f"{prefix}.c"])


class RegressionHead(Module):

    def __init__(self, d_in: int, hidden_size: int, rng: np.random.Generator):
        super().__init__()
        self.lstm = self.child('lstm', LSTMCell(d_in, hidden_size, rng))
        # zero heads: an untrained model predicts the identity correction
        self.rot = self.child('rot', Linear(hidden_size, 3, rng, zero_init=True))
        self.trans = self.child('trans', Linear(hidden_size, 3, rng, zero_init=True))

    def initial_state(self, batch: int, dtype=np.float32) -> HiddenState:
        return HiddenState(*self.lstm.initial_state(batch, dtype))

    def forward(self, f_select: np.ndarray, state: HiddenState):
        h, c, c_lstm = self.lstm.forward(f_select, state.h, state.c)
        rot, c_rot = self.rot.forward(h)
        trans, c_trans = self.trans.forward(h)
        return rot, trans, HiddenState(h, c), (c_lstm, c_rot, c_trans)

    def backward(self, d_rot: np.ndarray, d_trans: np.ndarray, dh_next: np.ndarray, dc_next: np.ndarray, cache):
        """`dh_next`/`dc_next` flow back from later iterations; returns (d f_select, dh, dc)."""
        c_lstm, c_rot, c_trans = cache
        dh = dh_next + self.rot.backward(d_rot, c_rot) + self.trans.backward(d_trans, c_trans)
        return self.lstm.backward(dh, dc_next, c_lstm)


def regression_head(head: RegressionHead, f_select: np.ndarray, state: HiddenState) -> tuple[list[CalibStep], HiddenState]:
    rot, trans, state, _ = head.forward(f_select, state)
    steps = [CalibStep(rot[b].astype(np.float64), trans[b].astype(np.float64)) for b in range(rot.shape[0])]
    return steps, state
