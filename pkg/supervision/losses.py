"""
Training objectives: matching loss, calibration loss and their weighted total.

Every loss returns its value together with gradients with respect to the
network outputs it consumes, so the pipeline can run its own backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from geometry.transforms import RigidTransform, matrix_to_rotvec, right_jacobian, rotvec_to_matrix
from matchnet.heads import MatchHeadOutput

from .matches import MatchMatrix

LOG_FLOOR = float(np.log(1e-12))


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.75
    beta: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")


@dataclass(frozen=True, eq=False)
class MatchGrad:
    d_log_p: np.ndarray
    d_not_i: np.ndarray
    d_not_r: np.ndarray


# ─────────────────────────────────────────────────────────────────────────────
# Matching
# ─────────────────────────────────────────────────────────────────────────────

def _clamp(log_values):
    log_values = np.asarray(log_values, dtype=np.float64)
    return np.maximum(log_values, LOG_FLOOR), log_values > LOG_FLOOR


def matching_loss_terms(output: MatchHeadOutput, gt: MatchMatrix, lam: float) -> tuple[float, MatchGrad]:
    """Loss of one view at one iteration (unbatched output)."""
    m = gt.m.astype(np.float64)
    n_i = gt.no_match_image.astype(np.float64)
    n_r = gt.no_match_radar.astype(np.float64)
    log_p, live_p = _clamp(output.log_p)
    log_ni, live_ni = _clamp(output.log_not_sigma_i)
    log_nr, live_nr = _clamp(output.log_not_sigma_r)

    loss = 0.0
    d_log_p = np.zeros_like(log_p)
    positives = m.sum()
    if positives > 0 and lam > 0:
        loss -= lam / positives * float(np.sum(log_p * m))
        d_log_p = -lam / positives * m * live_p
    negatives = n_i.sum() + n_r.sum()
    d_ni = np.zeros_like(log_ni)
    d_nr = np.zeros_like(log_nr)
    if negatives > 0 and lam < 1:
        w = (1.0 - lam) / negatives
        loss -= w * (float(np.sum(log_ni * n_i)) + float(np.sum(log_nr * n_r)))
        d_ni = -w * n_i * live_ni
        d_nr = -w * n_r * live_nr
    return loss, MatchGrad(d_log_p, d_ni, d_nr)


def matching_loss(outputs: list[MatchHeadOutput], gts: list[MatchMatrix], lam: float = 0.75):
    """Sum over iterations of one view; returns (loss, per-iteration gradients)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    total, grads = 0.0, []
    for output, gt in zip(outputs, gts, strict=True):
        loss, grad = matching_loss_terms(output, gt, lam)
        total += loss
        grads.append(grad)
    return total, grads


# ─────────────────────────────────────────────────────────────────────────────
# Calibration
# ─────────────────────────────────────────────────────────────────────────────

def smooth_l1(x, beta: float):
    """Elementwise Huber-style smooth L1 and its derivative."""
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    if beta <= 0:
        return a, np.sign(x)
    quad = a < beta
    value = np.where(quad, 0.5 * x * x / beta, a - 0.5 * beta)
    grad = np.where(quad, x / beta, np.sign(x))
    return value, grad


def pose_loss(rot_vec, trans, residual: RigidTransform, rot_beta: float = 0.05,
              trans_beta: float = 0.05) -> tuple[float, np.ndarray, np.ndarray]:
    """
    smooth-L1 of the geodesic angle between exp(rot_vec) and the residual
    rotation plus smooth-L1 of the translation difference.
    Returns (loss, d/d rot_vec, d/d trans).
    """
    v = np.asarray(rot_vec, dtype=np.float64).reshape(3)
    e = matrix_to_rotvec(residual.rotation.T @ rotvec_to_matrix(v))
    theta = float(np.linalg.norm(e))
    rot_value, _ = smooth_l1(theta, rot_beta)
    if theta == 0.0:
        d_rot = np.zeros(3)
    else:
        scale = 1.0 / rot_beta if theta < rot_beta else 1.0 / theta
        d_rot = right_jacobian(v).T @ e * scale
    diff = np.asarray(trans, dtype=np.float64).reshape(3) - residual.translation
    trans_value, d_trans = smooth_l1(diff, trans_beta)
    return float(rot_value) + float(trans_value.sum()), d_rot, d_trans


def calibration_loss(rot_vecs, translations, t_gt: RigidTransform, t_trace: list[RigidTransform],
                     rot_beta: float = 0.05, trans_beta: float = 0.05):
    """
    Iteration n (1-based) predicts a correction on top of `t_trace[n-1]`, the
    estimate it was fed; its target is t_trace[n-1]⁻¹·T_gt, weighted n/N.
    Returns (loss, [d rot_vec per iteration], [d trans per iteration]).
    """
    n_iter = len(rot_vecs)
    if len(translations) != n_iter or len(t_trace) < n_iter:
        raise ValueError("calibration loss needs one prediction and one input estimate per iteration")
    total, d_rots, d_trans = 0.0, [], []
    for n in range(n_iter):
        weight = (n + 1) / n_iter
        residual = t_trace[n].inverse() @ t_gt
        loss, dr, dt = pose_loss(rot_vecs[n], translations[n], residual, rot_beta, trans_beta)
        total += weight * loss
        d_rots.append(weight * dr)
        d_trans.append(weight * dt)
    return total, d_rots, d_trans


def total_loss(l_calib: float, l_matching: float, beta: float = 0.1) -> float:
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    return l_calib + beta * l_matching
