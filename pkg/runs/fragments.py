"""
Registry of differentiable fragments checked by `manage.py gradcheck`.

Each entry builds a float64 copy of one layer or composed block with a
scalar probe on top and hands it to `kernels.gradcheck.grad_check`. Single
layers are held to 1e-3, composed blocks to 5e-3. `corrupted_backward` is a
negative control whose backward is wrong on purpose and must fail.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from fusion.pipeline import CalibrationNet
from fusion.regression import HiddenState, RegressionHead
from fusion.selective import SelectiveFusion
from geometry.transforms import RigidTransform
from kernels import functional as F
from kernels.gradcheck import GradCheckReport, grad_check, jitter_parameters, projection_loss
from kernels.layers import Conv2d, Linear, LSTMCell
from matchnet.aggregate import ResidualConvBlock
from matchnet.attention import CrossAttention
from matchnet.heads import MatchHead
from raster.maps import scaled_rig
from synthdata.sensors import generate_samples, noise_profile

from .config import RunConfig
from .training import compute_losses, prepare_all

logger = logging.getLogger(__name__)

LAYER_TOL = 1e-3
BLOCK_TOL = 5e-3


@dataclass(frozen=True)
class Fragment:
    name: str
    tol: float
    build: Callable[[], tuple]   # -> (run, params, inputs, max_entries)
    expect_pass: bool = True

    def check(self, tol: float | None = None) -> GradCheckReport:
        run, params, inputs, max_entries = self.build()
        return grad_check(run, params, inputs, tol=self.tol if tol is None else tol,
                          name=self.name, max_entries=max_entries)


def _layer_run(layer):
    def run(inputs):
        y, cache = layer.forward(inputs['x'])
        loss, dy = projection_loss(y)
        return loss, lambda: {'x': layer.backward(dy, cache)}
    return run


# ─────────────────────────────────────────────────────────────────────────────
# Single layers
# ─────────────────────────────────────────────────────────────────────────────

def _linear():
    rng = np.random.default_rng(10)
    layer = Linear(5, 4, rng).astype(np.float64)
    return _layer_run(layer), layer.parameters(), {'x': rng.normal(size=(3, 5))}, 24


def _conv():
    rng = np.random.default_rng(11)
    layer = Conv2d(2, 3, 3, rng, stride=2, padding=1).astype(np.float64)
    return _layer_run(layer), layer.parameters(), {'x': rng.normal(size=(2, 2, 8, 8))}, 24


def _softmax():
    def run(inputs):
        y = F.softmax(inputs['x'], axis=-1)
        loss, dy = projection_loss(y)
        return loss, lambda: {'x': F.softmax_backward(dy, y, axis=-1)}
    return run, [], {'x': np.random.default_rng(12).normal(size=(3, 6))}, 24


def _lstm():
    rng = np.random.default_rng(13)
    cell = LSTMCell(3, 4, rng).astype(np.float64)

    def run(inputs):
        h, c, cache = cell.forward(inputs['x'], inputs['h0'], inputs['c0'])
        l1, d1 = projection_loss(h, 1)
        l2, d2 = projection_loss(c, 2)

        def backward():
            dx, dh, dc = cell.backward(d1, d2, cache)
            return {'x': dx, 'h0': dh, 'c0': dc}
        return l1 + l2, backward

    inputs = {'x': rng.normal(size=(2, 3)), 'h0': rng.normal(size=(2, 4)), 'c0': rng.normal(size=(2, 4))}
    return run, cell.parameters(), inputs, 24


def _corrupted():
    rng = np.random.default_rng(14)
    layer = Linear(4, 4, rng).astype(np.float64)

    def run(inputs):
        y, cache = layer.forward(inputs['x'])
        loss, dy = projection_loss(y)

        def backward():
            dx = layer.backward(dy, cache)
            layer.weight.tensor.grad *= 1.5
            return {'x': dx}
        return loss, backward

    return run, layer.parameters(), {'x': rng.normal(size=(3, 4))}, 24


# ─────────────────────────────────────────────────────────────────────────────
# Composed blocks
# ─────────────────────────────────────────────────────────────────────────────

def _mca():
    rng = np.random.default_rng(20)
    block = jitter_parameters(CrossAttention(4, rng).astype(np.float64), seed=20, scale=0.3)

    def run(inputs):
        hat_i, hat_r, _, cache = block.forward(inputs['f_i'], inputs['f_r'])
        l1, d1 = projection_loss(hat_i, 1)
        l2, d2 = projection_loss(hat_r, 2)

        def backward():
            df_i, df_r = block.backward(d1, d2, cache)
            return {'f_i': df_i, 'f_r': df_r}
        return l1 + l2, backward

    inputs = {'f_i': rng.normal(size=(2, 6, 4)), 'f_r': rng.normal(size=(2, 6, 4))}
    return run, block.parameters(), inputs, 12


def _residual_block():
    rng = np.random.default_rng(21)
    block = ResidualConvBlock(3, 2, 3, 5, rng).astype(np.float64)

    def run(inputs):
        y, cache = block.forward(inputs['hat_i'], inputs['hat_r'])
        loss, dy = projection_loss(y)

        def backward():
            d_i, d_r = block.backward(dy, cache)
            return {'hat_i': d_i, 'hat_r': d_r}
        return loss, backward

    inputs = {'hat_i': rng.normal(size=(2, 3, 2, 3)), 'hat_r': rng.normal(size=(2, 3, 2, 3))}
    return run, block.parameters(), inputs, 12


def _match_head():
    rng = np.random.default_rng(22)
    head = MatchHead(4, rng).astype(np.float64)

    def run(inputs):
        out, cache = head.forward(inputs['hat_i'], inputs['hat_r'])
        l1, d1 = projection_loss(out.log_p, 1)
        l2, d2 = projection_loss(out.log_not_sigma_i, 2)
        l3, d3 = projection_loss(out.log_not_sigma_r, 3)

        def backward():
            dh_i, dh_r = head.backward(d1, d2, d3, cache)
            return {'hat_i': dh_i, 'hat_r': dh_r}
        return l1 + l2 + l3, backward

    inputs = {'hat_i': rng.normal(size=(2, 5, 4)), 'hat_r': rng.normal(size=(2, 5, 4))}
    return run, head.parameters(), inputs, 12


def _selective_fusion():
    rng = np.random.default_rng(23)
    fusion = SelectiveFusion(5, rng).astype(np.float64)

    def run(inputs):
        y, _, cache = fusion.forward(inputs['f_bev'], inputs['f_fv'], update_stats=False)
        loss, dy = projection_loss(y)

        def backward():
            d_bev, d_fv = fusion.backward(dy, cache)
            return {'f_bev': d_bev, 'f_fv': d_fv}
        return loss, backward

    inputs = {'f_bev': rng.normal(size=(4, 5)), 'f_fv': rng.normal(size=(4, 5))}
    return run, fusion.parameters(), inputs, 12


def _regression_head():
    rng = np.random.default_rng(24)
    head = jitter_parameters(RegressionHead(4, 5, rng).astype(np.float64), seed=24, scale=0.3)

    def run(inputs):
        state = HiddenState(inputs['h0'], inputs['c0'])
        caches, probes, loss = [], [], 0.0
        for n in range(3):
            rot, trans, state, cache = head.forward(inputs[f'f{n}'], state)
            l1, d1 = projection_loss(rot, 10 + n)
            l2, d2 = projection_loss(trans, 20 + n)
            loss += l1 + l2
            caches.append(cache)
            probes.append((d1, d2))

        def backward():
            dh = np.zeros_like(inputs['h0'])
            dc = np.zeros_like(inputs['c0'])
            grads = {}
            for n in reversed(range(3)):
                grads[f'f{n}'], dh, dc = head.backward(*probes[n], dh, dc, caches[n])
            grads['h0'], grads['c0'] = dh, dc
            return grads
        return loss, backward

    inputs = {f'f{n}': rng.normal(size=(2, 4)) for n in range(3)}
    inputs['h0'], inputs['c0'] = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
    return run, head.parameters(), inputs, 12


FULL_LOSS_CONFIG = RunConfig(
    fv_height=32, fv_width=32, bev_height=32, bev_width=32,
    channels=4, d_f=8, hidden_size=6, iterations=1,
)


def _full_loss():
    """
    Calibration plus matching loss of one refinement step on two synthetic
    samples (4×4 feature grids). One step keeps the estimate fed to the
    network, and with it the rasterised radar maps, fixed under perturbation.
    """
    config = FULL_LOSS_CONFIG
    rig = scaled_rig(config.fv_shape, config.bev_shape)
    samples = generate_samples(2, 3, noise_profile('default'), rig, lidar_density=15.0)
    prepared = prepare_all(samples, config, rig)
    t_init = [s.t_gt.compose(_offset(i)) for i, s in enumerate(samples)]
    model = CalibrationNet(rig, config.network_spec(), seed=5).astype(np.float64)
    jitter_parameters(model, seed=5, scale=0.05)

    def run(inputs):
        result = compute_losses(model, prepared, t_init, config, rig)

        def backward():
            result.backward(model)
            return {}
        return result.losses.total, backward

    return run, model.parameters(), {}, 2


def _offset(i: int) -> RigidTransform:
    return RigidTransform.from_rotvec((0.02, -0.01 * (i + 1), 0.03), (0.1, -0.05, 0.2 * (i + 1)))


FRAGMENTS = {f.name: f for f in (
    Fragment('linear', LAYER_TOL, _linear),
    Fragment('conv', LAYER_TOL, _conv),
    Fragment('softmax', LAYER_TOL, _softmax),
    Fragment('lstm', LAYER_TOL, _lstm),
    Fragment('mca', BLOCK_TOL, _mca),
    Fragment('residual_block', BLOCK_TOL, _residual_block),
    Fragment('match_head', BLOCK_TOL, _match_head),
    Fragment('selective_fusion', BLOCK_TOL, _selective_fusion),
    Fragment('regression_head', BLOCK_TOL, _regression_head),
    Fragment('full_loss', BLOCK_TOL, _full_loss),
    Fragment('corrupted_backward', LAYER_TOL, _corrupted, expect_pass=False),
)}


@dataclass(frozen=True)
class FragmentResult:
    report: GradCheckReport
    expect_pass: bool
    seconds: float

    @property
    def ok(self) -> bool:
        return self.report.passed == self.expect_pass

    def as_row(self) -> dict:
        return {**self.report.as_row(), 'expected': 'pass' if self.expect_pass else 'fail',
                'ok': self.ok, 'seconds': round(self.seconds, 3)}


def run_fragments(names=None, tol: float | None = None) -> list[FragmentResult]:
    names = list(FRAGMENTS) if not names else list(names)
    unknown = [n for n in names if n not in FRAGMENTS]
    if unknown:
        raise KeyError(f"Unknown fragment(s): {', '.join(unknown)} (expected one of {', '.join(FRAGMENTS)})")
    results = []
    for name in names:
        fragment = FRAGMENTS[name]
        start = time.perf_counter()
        report = fragment.check(tol)
        results.append(FragmentResult(report, fragment.expect_pass, time.perf_counter() - start))
        logger.info("grad check %s: max rel. error %.3e (tol %.0e) %s",
                    name, report.max_rel_error, report.tol, 'pass' if report.passed else 'fail')
    return results
