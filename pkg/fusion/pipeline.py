"""
The full calibration network and the iterative refinement loop.

Per iteration the radar maps are re-rasterised with the current extrinsic
estimate (the image maps never change), both view branches run, their vectors
are fused and the regression head emits a correction composed on the right:
T ← T · T_pred. Rasterisation is not differentiable, so gradients flow within
an iteration and, through the LSTM state, across iterations only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from geometry.cameras import PointCloud
from geometry.transforms import RigidTransform, matrix_to_rotvec
from kernels.tensor import COMPUTE_DTYPE, Module, NumericalError
from matchnet.aggregate import ResidualConvBlock
from matchnet.attention import AttentionScores, CrossAttention
from matchnet.extractor import STRIDE, ImageExtractor, RadarExtractor, from_tokens, to_tokens
from matchnet.heads import MatchHead, MatchHeadOutput
from raster.maps import (
    InfoMap, SensorRig, depth_to_grayscale, depth_to_pseudo_bev, network_input, radar_input, rasterize_bev,
    rasterize_fv,
)
from supervision.losses import MatchGrad
from supervision.matches import reliability_filter
from synthdata.sensors import Sample

from .regression import CalibStep, HiddenState, RegressionHead
from .selective import FUSION_MODES, FusionWeights, SelectiveFusion, fuse, fuse_backward

logger = logging.getLogger(__name__)

HEIGHT_SCALE = 4.0  # meters; BEV normaliser when maps are normalised


@dataclass(frozen=True)
class NetworkSpec:
    channels: int = 32
    d_f: int = 256
    hidden_size: int = 128
    scaled_scores: bool = False
    use_fv: bool = True
    use_bev: bool = True
    use_mca: bool = True
    fusion_mode: str = 'selective'
    normalize_maps: bool = False

    def __post_init__(self):
        if not (self.use_fv or self.use_bev):
            raise ValueError("at least one of the FV and BEV branches must be enabled")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"Unknown fusion mode: {self.fusion_mode}")


# ─────────────────────────────────────────────────────────────────────────────
# Inputs
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class PreparedSample:
    """Per-sample data that does not depend on the extrinsic estimate."""

    sample: Sample
    cloud: PointCloud   # radar frame; reliability flags set when filtered
    depth: InfoMap
    pseudo_bev: InfoMap
    context: InfoMap


def prepare_sample(sample: Sample, rig: SensorRig, sensor: str = 'radar', delta: float = 1.0,
                   delta_s: float = 0.5, tau: int = 3) -> PreparedSample:
    if sensor == 'radar':
        in_camera = PointCloud(sample.t_gt.apply(sample.radar.points), 'radar')
        flags = reliability_filter(in_camera, sample.lidar, delta, delta_s, tau).reliable
        cloud = sample.radar.with_reliability(flags)
    elif sensor == 'lidar':
        cloud = sample.lidar_in_radar_frame()
    else:
        raise ValueError(f"Unknown sensor: {sensor}")
    hb, wb = rig.bev_shape
    pseudo_bev = depth_to_pseudo_bev(sample.depth, rig.k, rig.k_bev, rig.cam_height, hb, wb)
    return PreparedSample(sample, cloud, sample.depth, pseudo_bev, depth_to_grayscale(sample.depth, rig.max_depth))


@dataclass(frozen=True, eq=False)
class StepInput:
    radar_fv: np.ndarray   # (B, 2, H, W) radar depth and its residual against the depth map
    image_fv: np.ndarray
    context: np.ndarray
    radar_bev: np.ndarray  # (B, 2, H', W') radar height and its residual against the pseudo-BEV
    image_bev: np.ndarray
    t_curr: list[RigidTransform]
    prepared: list[PreparedSample]


def radar_maps(cloud: PointCloud, t_curr: RigidTransform, rig: SensorRig) -> tuple[InfoMap, InfoMap]:
    h, w = rig.fv_shape
    hb, wb = rig.bev_shape
    return (rasterize_fv(cloud, t_curr, rig.k, h, w),
            rasterize_bev(cloud, t_curr, rig.k_bev, rig.cam_height, hb, wb))


def build_step_input(prepared: list[PreparedSample], t_curr: list[RigidTransform], rig: SensorRig,
                     normalize: bool = False) -> StepInput:
    fv_scale = rig.max_depth if normalize else None
    bev_scale = HEIGHT_SCALE if normalize else None
    planes = {'radar_fv': [], 'image_fv': [], 'context': [], 'radar_bev': [], 'image_bev': []}
    for p, t in zip(prepared, t_curr, strict=True):
        fv, bev = radar_maps(p.cloud, t, rig)
        planes['radar_fv'].append(radar_input(fv, p.depth, fv_scale))
        planes['image_fv'].append(network_input(p.depth, fv_scale))
        planes['context'].append(network_input(p.context))
        planes['radar_bev'].append(radar_input(bev, p.pseudo_bev, bev_scale))
        planes['image_bev'].append(network_input(p.pseudo_bev, bev_scale))
    arrays = {k: np.stack(v).astype(COMPUTE_DTYPE) for k, v in planes.items()}
    return StepInput(**arrays, t_curr=list(t_curr), prepared=list(prepared))


# ─────────────────────────────────────────────────────────────────────────────
# Network
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class BranchOutput:
    feature: np.ndarray           # (B, d_f)
    match: MatchHeadOutput        # batched
    scores: AttentionScores | None
    grid: tuple[int, int]


class ViewBranch(Module):
    """Extractors, cross-attention, residual aggregation and match head of one view."""

    def __init__(self, view: str, grid: tuple[int, int], spec: NetworkSpec, rng: np.random.Generator):
        super().__init__()
        self.view = view
        self.grid = grid
        c = spec.channels
        self.radar = self.child('radar', RadarExtractor(c, rng, view))
        self.image = self.child('image', ImageExtractor(c, rng, view, with_context=(view == 'FV')))
        self.attention = self.child('attention', CrossAttention(c, rng, spec.scaled_scores)) if spec.use_mca else None
        self.block = self.child('block', ResidualConvBlock(c, grid[0], grid[1], spec.d_f, rng))
        self.head = self.child('head', MatchHead(c, rng))

    def forward(self, radar_map: np.ndarray, image_map: np.ndarray, context: np.ndarray | None = None):
        f_r, c_r = self.radar.forward(radar_map)
        f_i, c_i = self.image.forward(image_map, context)
        t_i, t_r = to_tokens(f_i.tensor), to_tokens(f_r.tensor)
        scores, c_att = None, None
        if self.attention is not None:
            hat_i, hat_r, scores, c_att = self.attention.forward(t_i, t_r)
        else:
            hat_i, hat_r = t_i, t_r
        h, w = self.grid
        feature, c_blk = self.block.forward(from_tokens(hat_i, h, w), from_tokens(hat_r, h, w))
        match, c_head = self.head.forward(hat_i, hat_r)
        return BranchOutput(feature, match, scores, self.grid), (c_r, c_i, c_att, c_blk, c_head)

    def backward(self, d_feature: np.ndarray, d_log_p, d_not_i, d_not_r, cache) -> None:
        c_r, c_i, c_att, c_blk, c_head = cache
        dg_i, dg_r = self.block.backward(d_feature, c_blk)
        dh_i, dh_r = self.head.backward(d_log_p, d_not_i, d_not_r, c_head)
        dh_i = dh_i + to_tokens(dg_i)
        dh_r = dh_r + to_tokens(dg_r)
        if c_att is not None:
            dh_i, dh_r = self.attention.backward(dh_i, dh_r, c_att)
        h, w = self.grid
        self.radar.backward(from_tokens(dh_r, h, w), c_r)
        self.image.backward(from_tokens(dh_i, h, w), c_i)


@dataclass(frozen=True, eq=False)
class StepOutput:
    rot: np.ndarray      # (B, 3)
    trans: np.ndarray    # (B, 3)
    state: HiddenState
    fv: BranchOutput | None
    bev: BranchOutput | None
    weights: FusionWeights | None


class Calibrator(Protocol):
    def initial_state(self, batch: int) -> HiddenState: ...

    def predict(self, step: StepInput, state: HiddenState) -> StepOutput: ...


class CalibrationNet(Module):

    def __init__(self, rig: SensorRig, spec: NetworkSpec | None = None, seed: int = 0):
        super().__init__()
        self.rig = rig
        self.spec = spec = spec or NetworkSpec()
        rng = np.random.default_rng(seed)
        fv_grid = (rig.fv_shape[0] // STRIDE, rig.fv_shape[1] // STRIDE)
        bev_grid = (rig.bev_shape[0] // STRIDE, rig.bev_shape[1] // STRIDE)
        self.fv = self.child('fv', ViewBranch('FV', fv_grid, spec, rng)) if spec.use_fv else None
        self.bev = self.child('bev', ViewBranch('BEV', bev_grid, spec, rng)) if spec.use_bev else None
        both = spec.use_fv and spec.use_bev
        self.fusion = (self.child('fusion', SelectiveFusion(spec.d_f, rng))
                       if both and spec.fusion_mode == 'selective' else None)
        d_in = 2 * spec.d_f if both and spec.fusion_mode == 'concat' else spec.d_f
        self.regression = self.child('regression', RegressionHead(d_in, spec.hidden_size, rng))

    def initial_state(self, batch: int) -> HiddenState:
        return self.regression.initial_state(batch, self.regression.lstm.wx.data.dtype)

    def forward_step(self, step: StepInput, state: HiddenState):
        fv = bev = None
        c_fv = c_bev = c_fuse = None
        if self.fv is not None:
            fv, c_fv = self.fv.forward(step.radar_fv, step.image_fv, step.context)
        if self.bev is not None:
            bev, c_bev = self.bev.forward(step.radar_bev, step.image_bev)
        weights = None
        if fv is not None and bev is not None:
            fused, weights, c_fuse = fuse(self.spec.fusion_mode, self.fusion, bev.feature, fv.feature, self.training)
        else:
            fused = (fv or bev).feature
        rot, trans, new_state, c_reg = self.regression.forward(fused, state)
        out = StepOutput(rot, trans, new_state, fv, bev, weights)
        return out, (c_fv, c_bev, c_fuse, c_reg)

    def predict(self, step: StepInput, state: HiddenState) -> StepOutput:
        out, _ = self.forward_step(step, state)
        return out

    def backward_step(self, d_rot, d_trans, dh, dc, match_grads: dict, cache):
        """
        `match_grads` maps 'FV'/'BEV' to a batched MatchGrad; a missing view gets zeros.
        Returns the gradients for the previous hidden state.
        """
        c_fv, c_bev, c_fuse, c_reg = cache
        d_fused, dh_prev, dc_prev = self.regression.backward(d_rot, d_trans, dh, dc, c_reg)
        if c_fv is not None and c_bev is not None:
            d_bev, d_fv = fuse_backward(self.spec.fusion_mode, self.fusion, d_fused, c_fuse)
        else:
            d_bev = d_fv = d_fused
        for branch, d_feature, c_branch in ((self.fv, d_fv, c_fv), (self.bev, d_bev, c_bev)):
            if c_branch is None:
                continue
            g = match_grads.get(branch.view) or _zero_match_grads(c_branch)
            branch.backward(d_feature, g.d_log_p, g.d_not_i, g.d_not_r, c_branch)
        return dh_prev, dc_prev


def _zero_match_grads(branch_cache) -> MatchGrad:
    b, m, _ = branch_cache[-1][2].shape
    return MatchGrad(np.zeros((b, m, m)), np.zeros((b, m)), np.zeros((b, m)))


class ResidualOracle:
    """Test double predicting the exact remaining correction T_curr⁻¹·T_gt."""

    def initial_state(self, batch: int) -> HiddenState:
        zeros = np.zeros((batch, 1))
        return HiddenState(zeros, zeros)

    def predict(self, step: StepInput, state: HiddenState) -> StepOutput:
        rot, trans = [], []
        for p, t in zip(step.prepared, step.t_curr):
            residual = t.inverse() @ p.sample.t_gt
            rot.append(matrix_to_rotvec(residual.rotation))
            trans.append(residual.translation)
        return StepOutput(np.array(rot), np.array(trans), state, None, None, None)


# ─────────────────────────────────────────────────────────────────────────────
# Iteration
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class IterationRecord:
    t_in: RigidTransform
    step: CalibStep
    t_out: RigidTransform
    fv_scores: np.ndarray | None = None   # (m, m) attention scores
    bev_scores: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class CalibrationTrace:
    t_init: RigidTransform
    final: RigidTransform
    iterations: list[IterationRecord] = field(default_factory=list)

    @property
    def trace(self) -> list[RigidTransform]:
        """Estimates fed to each iteration, then the final one."""
        return [r.t_in for r in self.iterations] + [self.final]


@dataclass
class Tape:
    """Everything a training step needs to run backward through the iterations."""

    inputs: list[StepInput] = field(default_factory=list)
    outputs: list[StepOutput] = field(default_factory=list)
    caches: list = field(default_factory=list)


def run_iterations(prepared: list[PreparedSample], t_init: list[RigidTransform], model, n: int,
                   rig: SensorRig, normalize: bool = False, record_tape: bool = False):
    """Batched refinement; returns (traces, tape or None)."""
    if n < 1:
        raise ValueError(f"need at least one iteration, got {n}")
    t_curr = list(t_init)
    records = [[] for _ in prepared]
    state = model.initial_state(len(prepared))
    tape = Tape() if record_tape else None
    for _ in range(n):
        step = build_step_input(prepared, t_curr, rig, normalize)
        if record_tape:
            out, cache = model.forward_step(step, state)
            tape.inputs.append(step)
            tape.outputs.append(out)
            tape.caches.append(cache)
        else:
            out = model.predict(step, state)
        rot = np.asarray(out.rot, dtype=np.float64)
        trans = np.asarray(out.trans, dtype=np.float64)
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(trans))):
            raise NumericalError("non-finite calibration output")
        for b, t in enumerate(t_curr):
            calib = CalibStep(rot[b], trans[b])
            t_next = (t @ calib.transform()).orthonormalized()
            records[b].append(IterationRecord(
                t, calib, t_next,
                None if out.fv is None or out.fv.scores is None else out.fv.scores.scores[b],
                None if out.bev is None or out.bev.scores is None else out.bev.scores.scores[b],
            ))
            t_curr[b] = t_next
        state = out.state
    traces = [CalibrationTrace(t0, recs[-1].t_out, recs) for t0, recs in zip(t_init, records)]
    return traces, tape


def backward_iterations(model: CalibrationNet, tape: Tape, d_rots: list[np.ndarray], d_trans: list[np.ndarray],
                        match_grads: list[dict]) -> None:
    """Reverse sweep over iterations, carrying the LSTM state gradients."""
    dh = np.zeros_like(tape.outputs[-1].state.h)
    dc = np.zeros_like(tape.outputs[-1].state.c)
    for n in reversed(range(len(tape.caches))):
        dh, dc = model.backward_step(d_rots[n], d_trans[n], dh, dc, match_grads[n], tape.caches[n])


def iterate_calibration(sample: Sample | PreparedSample, t_init: RigidTransform, model, n: int,
                        rig: SensorRig, normalize: bool = False) -> CalibrationTrace:
    """Refine one sample's extrinsic for `n` iterations."""
    prepared = sample if isinstance(sample, PreparedSample) else prepare_sample(sample, rig)
    traces, _ = run_iterations([prepared], [t_init], model, n, rig, normalize)
    return traces[0]
