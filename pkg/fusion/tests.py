import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from geometry.transforms import RigidTransform
from kernels.checkpoint import load_checkpoint, save_checkpoint
from kernels.gradcheck import grad_check, jitter_parameters, projection_loss
from kernels.tensor import NumericalError, ShapeError
from raster.maps import default_rig, residual_map, scaled_rig
from supervision.losses import MatchGrad, calibration_loss
from synthdata.sensors import generate_samples, noise_profile

from .pipeline import (
    CalibrationNet, NetworkSpec, ResidualOracle, StepOutput, backward_iterations, build_step_input,
    iterate_calibration, prepare_sample, radar_maps, run_iterations,
)
from .regression import CalibStep, HiddenState, RegressionHead, regression_head
from .selective import SelectiveFusion, fuse, fuse_backward, selective_fusion

RIG = scaled_rig((32, 32), (32, 32))
TINY = NetworkSpec(channels=4, d_f=8, hidden_size=6)


def tiny_samples(count=2, seed=3):
    return generate_samples(count, seed, noise_profile('default'), RIG, lidar_density=15.0)


def offset(t: RigidTransform, rot=(0.02, -0.01, 0.03), trans=(0.1, -0.05, 0.2)) -> RigidTransform:
    return t @ RigidTransform.from_rotvec(rot, trans)


class ScriptedCalibrator:
    """Emits a fixed sequence of corrections."""

    def __init__(self, steps):
        self.steps = steps
        self.calls = 0

    def initial_state(self, batch):
        return HiddenState(np.zeros((batch, 1)), np.zeros((batch, 1)))

    def predict(self, step, state):
        rot, trans = self.steps[self.calls]
        self.calls += 1
        b = len(step.t_curr)
        return StepOutput(np.tile(rot, (b, 1)), np.tile(trans, (b, 1)), state, None, None, None)


class SelectiveFusionTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.fusion = SelectiveFusion(6, self.rng)

    def test_weights_sum_to_one(self):
        f_bev, f_fv = self.rng.normal(size=(5, 6)), self.rng.normal(size=(5, 6))
        _, weights = selective_fusion(self.fusion, f_bev, f_fv)
        np.testing.assert_allclose(weights.a_bev + weights.a_fv, np.ones((5, 6)), atol=1e-6)
        self.assertTrue(np.all((weights.a_bev >= 0) & (weights.a_bev <= 1)))

    def test_equal_logits_average_the_branches(self):
        self.fusion.head_fv.load_state_dict(self.fusion.head_bev.state_dict())
        f_bev, f_fv = self.rng.normal(size=(3, 6)), self.rng.normal(size=(3, 6))
        out, weights = selective_fusion(self.fusion, f_bev, f_fv)
        np.testing.assert_allclose(weights.a_bev, np.full((3, 6), 0.5))
        np.testing.assert_allclose(out, (f_bev + f_fv) / 2, rtol=1e-6)

    def test_equal_inputs_pass_through(self):
        f = self.rng.normal(size=(4, 6)).astype(np.float32)
        out, _ = selective_fusion(self.fusion, f, f)
        np.testing.assert_allclose(out, f, rtol=1e-6)

    def test_swapping_inputs_and_heads_swaps_weights(self):
        f_bev, f_fv = self.rng.normal(size=(4, 6)), self.rng.normal(size=(4, 6))
        _, w = selective_fusion(self.fusion, f_bev, f_fv)
        bev_state, fv_state = self.fusion.head_bev.state_dict(), self.fusion.head_fv.state_dict()
        self.fusion.head_bev.load_state_dict(fv_state)
        self.fusion.head_fv.load_state_dict(bev_state)
        _, swapped = selective_fusion(self.fusion, f_fv, f_bev)
        np.testing.assert_allclose(swapped.a_bev, w.a_fv, atol=1e-6)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            self.fusion.forward(np.zeros((2, 6)), np.zeros((2, 5)))

    def test_gradients(self):
        fusion = SelectiveFusion(5, np.random.default_rng(1)).astype(np.float64)

        def run(inputs):
            y, _, cache = fusion.forward(inputs['f_bev'], inputs['f_fv'])
            loss, dy = projection_loss(y)

            def backward():
                d_bev, d_fv = fusion.backward(dy, cache)
                return {'f_bev': d_bev, 'f_fv': d_fv}
            return loss, backward

        inputs = {'f_bev': self.rng.normal(size=(4, 5)), 'f_fv': self.rng.normal(size=(4, 5))}
        report = grad_check(run, fusion.parameters(), inputs, name='selective fusion')
        self.assertTrue(report.passed, report.errors)

    def test_add_and_concat_modes(self):
        f_bev, f_fv = self.rng.normal(size=(2, 6)), self.rng.normal(size=(2, 6))
        added, weights, cache = fuse('add', None, f_bev, f_fv)
        self.assertIsNone(weights)
        np.testing.assert_allclose(added, f_bev + f_fv)
        joined, _, cache = fuse('concat', None, f_bev, f_fv)
        self.assertEqual(joined.shape, (2, 12))
        dy = self.rng.normal(size=(2, 12))
        d_bev, d_fv = fuse_backward('concat', None, dy, cache)
        np.testing.assert_array_equal(np.concatenate([d_bev, d_fv], axis=1), dy)
        with self.assertRaises(ValueError):
            fuse('max', None, f_bev, f_fv)


class RegressionHeadTests(SimpleTestCase):

    def test_untrained_head_predicts_identity(self):
        head = RegressionHead(8, 6, np.random.default_rng(0))
        f = np.random.default_rng(1).normal(size=(3, 8)).astype(np.float32)
        steps, state = regression_head(head, f, head.initial_state(3))
        self.assertEqual(len(steps), 3)
        for step in steps:
            self.assertTrue(step.transform().allclose(RigidTransform.identity(), atol=0))
        self.assertFalse(np.allclose(state.h, 0))

    def test_calib_step_transform(self):
        step = CalibStep(np.array([0.0, 0.0, np.pi / 2]), np.array([1.0, 2.0, 3.0]))
        t = step.transform()
        np.testing.assert_allclose(t.apply([[1.0, 0.0, 0.0]])[0], [1.0, 3.0, 3.0], atol=1e-12)

    def test_hidden_state_checkpoint_round_trip(self):
        head = RegressionHead(4, 5, np.random.default_rng(2))
        _, state = regression_head(head, np.ones((2, 4), np.float32), head.initial_state(2))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / 'state.ckpt', state.as_tensors())
            restored = HiddenState.from_tensors(load_checkpoint(path).tensors)
        self.assertEqual(restored.h.tobytes(), state.h.tobytes())
        self.assertEqual(restored.c.tobytes(), state.c.tobytes())

    def test_unrolled_gradients(self):
        rng = np.random.default_rng(3)
        head = jitter_parameters(RegressionHead(4, 5, rng).astype(np.float64), seed=3, scale=0.3)

        def run(inputs):
            state = HiddenState(inputs['h0'], inputs['c0'])
            caches, loss, probes = [], 0.0, []
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
        report = grad_check(run, head.parameters(), inputs, name='regression head')
        self.assertTrue(report.passed, report.errors)


class PipelineTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.samples = tiny_samples()
        cls.prepared = [prepare_sample(s, RIG) for s in cls.samples]

    def test_step_input_shapes(self):
        t = [s.t_gt for s in self.samples]
        step = build_step_input(self.prepared, t, RIG)
        self.assertEqual(step.radar_fv.shape, (2, 2, 32, 32))
        self.assertEqual(step.image_bev.shape, (2, 1, 32, 32))
        self.assertEqual(step.radar_fv.dtype, np.float32)
        norm = build_step_input(self.prepared, t, RIG, normalize=True)
        self.assertLessEqual(float(norm.image_fv.max()), 1.0)

    def test_untrained_model_keeps_the_estimate(self):
        model = CalibrationNet(RIG, TINY, seed=0).eval()
        t0 = offset(self.samples[0].t_gt)
        trace = iterate_calibration(self.prepared[0], t0, model, 3, RIG)
        self.assertEqual(len(trace.iterations), 3)
        self.assertTrue(trace.final.allclose(t0, atol=1e-12))

    def test_single_iteration_is_one_forward_pass(self):
        model = jitter_parameters(CalibrationNet(RIG, TINY, seed=1), seed=1).eval()
        t0 = offset(self.samples[0].t_gt)
        trace = iterate_calibration(self.samples[0], t0, model, 1, RIG)
        step = build_step_input([self.prepared[0]], [t0], RIG)
        out = model.predict(step, model.initial_state(1))
        expected = (t0 @ CalibStep(out.rot[0].astype(np.float64), out.trans[0].astype(np.float64)).transform())
        self.assertTrue(trace.final.allclose(expected.orthonormalized(), atol=1e-12))

    def test_composition_order(self):
        a = (np.array([0.1, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
        b = (np.array([0.0, 0.0, 0.2]), np.array([0.0, 2.0, 0.0]))
        t0 = RigidTransform.from_rotvec((0.0, 0.3, 0.0), (0.0, 0.0, 1.0))
        trace = iterate_calibration(self.prepared[0], t0, ScriptedCalibrator([a, b]), 2, RIG)
        expected = (t0.as_matrix() @ RigidTransform.from_rotvec(*a).as_matrix()
                    @ RigidTransform.from_rotvec(*b).as_matrix())
        np.testing.assert_allclose(trace.final.as_matrix(), expected, atol=1e-12)
        self.assertEqual(len(trace.trace), 3)
        self.assertTrue(trace.trace[1].allclose(trace.iterations[0].t_out))

    def test_oracle_reaches_ground_truth(self):
        t0 = [offset(s.t_gt) for s in self.samples]
        traces, _ = run_iterations(self.prepared, t0, ResidualOracle(), 3, RIG)
        for trace, sample in zip(traces, self.samples):
            self.assertTrue(trace.final.allclose(sample.t_gt, atol=1e-9))

    def test_deterministic(self):
        model = jitter_parameters(CalibrationNet(RIG, TINY, seed=2), seed=2).eval()
        t0 = [offset(s.t_gt) for s in self.samples]
        first, _ = run_iterations(self.prepared, t0, model, 2, RIG)
        second, _ = run_iterations(self.prepared, t0, model, 2, RIG)
        for x, y in zip(first, second):
            self.assertEqual(x.final.as_matrix().tobytes(), y.final.as_matrix().tobytes())

    def test_iteration_count_and_non_finite_outputs(self):
        model = CalibrationNet(RIG, TINY).eval()
        with self.assertRaises(ValueError):
            iterate_calibration(self.prepared[0], self.samples[0].t_gt, model, 0, RIG)
        bad = ScriptedCalibrator([(np.array([np.nan, 0, 0]), np.zeros(3))])
        with self.assertRaises(NumericalError):
            iterate_calibration(self.prepared[0], self.samples[0].t_gt, bad, 1, RIG)

    def test_ablation_variants_build_and_run(self):
        variants = [
            NetworkSpec(channels=4, d_f=8, hidden_size=6, use_bev=False),
            NetworkSpec(channels=4, d_f=8, hidden_size=6, use_fv=False),
            NetworkSpec(channels=4, d_f=8, hidden_size=6, use_mca=False),
            NetworkSpec(channels=4, d_f=8, hidden_size=6, fusion_mode='add'),
            NetworkSpec(channels=4, d_f=8, hidden_size=6, fusion_mode='concat'),
        ]
        for spec in variants:
            model = CalibrationNet(RIG, spec).eval()
            traces, _ = run_iterations(self.prepared, [s.t_gt for s in self.samples], model, 1, RIG)
            self.assertEqual(len(traces), 2)
        self.assertEqual(CalibrationNet(RIG, variants[-1]).regression.lstm.input_size, 16)
        with self.assertRaises(ValueError):
            NetworkSpec(use_fv=False, use_bev=False)

    def test_attention_scores_are_recorded(self):
        model = CalibrationNet(RIG, TINY).eval()
        trace = iterate_calibration(self.prepared[0], self.samples[0].t_gt, model, 1, RIG)
        self.assertEqual(trace.iterations[0].fv_scores.shape, (16, 16))
        self.assertEqual(trace.iterations[0].bev_scores.shape, (16, 16))

    def test_backward_through_iterations(self):
        model = jitter_parameters(CalibrationNet(RIG, TINY, seed=4).astype(np.float64), seed=4, scale=0.05)
        t0 = [offset(s.t_gt) for s in self.samples]

        def run(inputs):
            _, tape = run_iterations(self.prepared, t0, model, 2, RIG, record_tape=True)
            loss, d_rots, d_trans, match_grads = 0.0, [], [], []
            for n, out in enumerate(tape.outputs):
                l1, d1 = projection_loss(out.rot, 10 + n)
                l2, d2 = projection_loss(out.trans, 20 + n)
                grads = {}
                for view, branch in (('FV', out.fv), ('BEV', out.bev)):
                    lp, dp = projection_loss(branch.match.log_p, 30 + n)
                    li, di = projection_loss(branch.match.log_not_sigma_i, 40 + n)
                    lr, dr = projection_loss(branch.match.log_not_sigma_r, 50 + n)
                    loss += 0.1 * (lp + li + lr)
                    grads[view] = MatchGrad(0.1 * dp, 0.1 * di, 0.1 * dr)
                loss += l1 + l2
                d_rots.append(d1)
                d_trans.append(d2)
                match_grads.append(grads)

            def backward():
                backward_iterations(model, tape, d_rots, d_trans, match_grads)
                return {}
            return loss, backward

        report = grad_check(run, model.parameters(), {}, name='pipeline', max_entries=3, tol=5e-3)
        self.assertTrue(report.passed, report.errors)

    def test_calibration_loss_gradient_single_iteration(self):
        model = jitter_parameters(CalibrationNet(RIG, TINY, seed=5).astype(np.float64), seed=5, scale=0.05)
        t0 = [offset(s.t_gt) for s in self.samples]

        def run(inputs):
            _, tape = run_iterations(self.prepared, t0, model, 1, RIG, record_tape=True)
            out = tape.outputs[0]
            loss, d_rot, d_trans = 0.0, [], []
            for b, sample in enumerate(self.samples):
                value, dr, dt = calibration_loss([out.rot[b]], [out.trans[b]], sample.t_gt, [t0[b]])
                loss += value
                d_rot.append(dr[0])
                d_trans.append(dt[0])

            def backward():
                backward_iterations(model, tape, [np.array(d_rot)], [np.array(d_trans)], [{}])
                return {}
            return loss, backward

        report = grad_check(run, model.parameters(), {}, name='calibration loss', max_entries=3, tol=5e-3)
        self.assertTrue(report.passed, report.errors)


class TranslationObservabilityTests(SimpleTestCase):
    """A quarter-meter offset must move the default-rig radar inputs by whole pixels."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.rig = default_rig()
        samples = generate_samples(4, 11, noise_profile('clean'), cls.rig, lidar_density=5.0)
        cls.prepared = [prepare_sample(s, cls.rig) for s in samples]

    def shifted(self, p, trans):
        return RigidTransform.from_rotvec(np.zeros(3), trans) @ p.sample.t_gt

    def test_lateral_offset_shifts_bev_radar_by_one_pixel(self):
        for p in self.prepared:
            _, at_gt = radar_maps(p.cloud, p.sample.t_gt, self.rig)
            _, moved = radar_maps(p.cloud, self.shifted(p, (0.25, 0.0, 0.0)), self.rig)
            self.assertEqual(at_gt.occupied, moved.occupied)
            shift = np.nonzero(moved.mask)[1].mean() - np.nonzero(at_gt.mask)[1].mean()
            self.assertAlmostEqual(shift, 1.0, delta=0.05)

    def test_depth_offset_moves_the_fv_residual(self):
        at_gt, moved = [], []
        for p in self.prepared:
            for t, out in ((p.sample.t_gt, at_gt), (self.shifted(p, (0.0, 0.0, 0.25)), moved)):
                fv, _ = radar_maps(p.cloud, t, self.rig)
                residual = residual_map(fv, p.depth)
                out.extend(residual.values[residual.mask])
        self.assertGreater(len(at_gt), 20)
        self.assertLess(abs(np.median(at_gt)), 0.1)
        self.assertAlmostEqual(np.median(moved) - np.median(at_gt), 0.25, delta=0.1)

    def test_radar_inputs_carry_the_residual_plane(self):
        p = self.prepared[0]
        step = build_step_input([p], [p.sample.t_gt], self.rig)
        fv, bev = radar_maps(p.cloud, p.sample.t_gt, self.rig)
        np.testing.assert_array_equal(step.radar_fv[0, 0], fv.values)
        np.testing.assert_array_equal(step.radar_fv[0, 1], residual_map(fv, p.depth).values)
        np.testing.assert_array_equal(step.radar_bev[0, 1], residual_map(bev, p.pseudo_bev).values)
