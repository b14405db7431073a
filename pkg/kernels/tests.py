import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from . import functional as F
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, projection_loss
from .layers import BatchNorm1d, Conv2d, LayerNorm, Linear, LSTMCell, conv2d, layer_norm, linear, lstm_cell
from .optim import Adam, AdamState, adam_step, halving_lr
from .tensor import Module, Parameter, ShapeError


def layer_fragment(layer, **forward_kwargs):
    def run(inputs):
        y, cache = layer.forward(inputs['x'], **forward_kwargs)
        loss, dy = projection_loss(y)
        return loss, lambda: {'x': layer.backward(dy, cache)}
    return run


class FunctionalTests(SimpleTestCase):

    def test_softmax_examples(self):
        np.testing.assert_allclose(F.softmax(np.zeros(2)), [0.5, 0.5])
        np.testing.assert_allclose(F.softmax(np.log([1.0, 3.0])), [0.25, 0.75], atol=1e-12)

    def test_softmax_shift_invariance_and_normalisation(self):
        x = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
        np.testing.assert_allclose(F.softmax(x + 40.0), F.softmax(x), atol=1e-6)
        y = F.softmax(x, axis=0)
        self.assertTrue(np.all(y >= 0))
        np.testing.assert_allclose(y.sum(axis=0), np.ones(7), atol=1e-6)

    def test_activation_values(self):
        self.assertEqual(F.sigmoid(np.array([0.0]))[0], 0.5)
        self.assertAlmostEqual(F.leaky_relu(np.array([-1.0]))[0], -0.01)
        np.testing.assert_array_equal(layer_norm(np.full((1, 6), 3.0)), np.zeros((1, 6)))

    def test_sigmoid_and_log_sigmoid_are_finite_at_extremes(self):
        x = np.array([-800.0, -30.0, 0.0, 30.0, 800.0])
        self.assertTrue(np.all(np.isfinite(F.sigmoid(x))))
        self.assertTrue(np.all(np.isfinite(F.log_sigmoid(x))))
        np.testing.assert_allclose(np.exp(F.log_sigmoid(x[1:4])), F.sigmoid(x[1:4]))

    def test_elementwise_backwards_match_finite_differences(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 6))
        x[np.abs(x) < 1e-3] = 0.5
        eps = 1e-6
        cases = [
            (F.sigmoid, lambda dy, x, y: F.sigmoid_backward(dy, y)),
            (F.gelu, lambda dy, x, y: F.gelu_backward(dy, x)),
            (F.leaky_relu, lambda dy, x, y: F.leaky_relu_backward(dy, x)),
            (F.log_sigmoid, lambda dy, x, y: F.log_sigmoid_backward(dy, x)),
            (lambda v: F.softmax(v, -1), lambda dy, x, y: F.softmax_backward(dy, y, -1)),
            (lambda v: F.log_softmax(v, 0), lambda dy, x, y: F.log_softmax_backward(dy, y, 0)),
        ]
        for forward, backward in cases:
            y = forward(x)
            _, dy = projection_loss(y)
            analytic = backward(dy, x, y)
            numeric = np.zeros_like(x)
            for idx in np.ndindex(x.shape):
                xp, xm = x.copy(), x.copy()
                xp[idx] += eps
                xm[idx] -= eps
                numeric[idx] = (projection_loss(forward(xp))[0] - projection_loss(forward(xm))[0]) / (2 * eps)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


class LinearTests(SimpleTestCase):

    def test_identity_weight(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_allclose(linear(x, np.eye(4), np.zeros(4)), x)

    def test_scalar_case(self):
        self.assertEqual(linear(np.array([[2.0]]), np.array([[3.0]]), np.array([1.0]))[0, 0], 7.0)

    def test_shape_mismatch(self):
        layer = Linear(4, 2, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            layer.forward(np.zeros((3, 5), np.float32))

    def test_gradient_check(self):
        rng = np.random.default_rng(2)
        layer = Linear(5, 3, rng).astype(np.float64)
        report = grad_check(layer_fragment(layer), layer.parameters(), {'x': rng.normal(size=(2, 4, 5))})
        self.assertTrue(report.passed, report.errors)

    def test_corrupted_backward_fails(self):
        rng = np.random.default_rng(3)
        layer = Linear(4, 4, rng).astype(np.float64)

        def run(inputs):
            y, cache = layer.forward(inputs['x'])
            loss, dy = projection_loss(y)

            def backward():
                dx = layer.backward(dy, cache)
                layer.weight.tensor.grad *= 1.5
                return {'x': dx}
            return loss, backward

        report = grad_check(run, layer.parameters(), {'x': rng.normal(size=(3, 4))})
        self.assertFalse(report.passed)

    def test_non_finite_loss_is_reported(self):
        def run(inputs):
            return float('nan'), lambda: {'x': np.zeros(2)}
        report = grad_check(run, [], {'x': np.zeros(2)})
        self.assertFalse(report.passed)
        self.assertFalse(report.finite)


class Conv2dTests(SimpleTestCase):

    def test_one_by_one_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 5, 6))
        w = np.eye(3).reshape(3, 3, 1, 1)
        np.testing.assert_allclose(conv2d(x, w), x)

    def test_averaging_kernel_on_constant_input(self):
        x = np.full((1, 6, 6), 2.5)
        w = np.full((1, 1, 3, 3), 1.0 / 9.0)
        np.testing.assert_allclose(conv2d(x, w, padding=0), np.full((1, 4, 4), 2.5))

    def test_stride_arithmetic(self):
        layer = Conv2d(1, 4, 3, np.random.default_rng(0), stride=2, padding=1)
        y, _ = layer.forward(np.zeros((2, 1, 96, 96), np.float32))
        self.assertEqual(y.shape, (2, 4, 48, 48))
        self.assertEqual(y.dtype, np.float32)

    def test_kernel_must_fit(self):
        layer = Conv2d(1, 1, 5, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            layer.forward(np.zeros((1, 1, 3, 3)))

    def test_gradient_check(self):
        rng = np.random.default_rng(4)
        for stride, padding in ((1, 1), (2, 1), (2, 0)):
            layer = Conv2d(2, 3, 3, rng, stride=stride, padding=padding).astype(np.float64)
            report = grad_check(layer_fragment(layer), layer.parameters(), {'x': rng.normal(size=(1, 2, 8, 8))})
            self.assertTrue(report.passed, (stride, padding, report.errors))


class NormalisationTests(SimpleTestCase):

    def test_layer_norm_gradient_check(self):
        rng = np.random.default_rng(5)
        layer = LayerNorm(6).astype(np.float64)
        layer.gamma.data = rng.normal(size=6)
        report = grad_check(layer_fragment(layer), layer.parameters(), {'x': rng.normal(size=(3, 6))})
        self.assertTrue(report.passed, report.errors)

    def test_batch_norm_gradient_check_in_training_mode(self):
        rng = np.random.default_rng(6)
        layer = BatchNorm1d(5).astype(np.float64)
        report = grad_check(layer_fragment(layer, update_stats=False), layer.parameters(), {'x': rng.normal(size=(4, 5))})
        self.assertTrue(report.passed, report.errors)

    def test_batch_norm_eval_uses_running_statistics(self):
        layer = BatchNorm1d(2)
        x = np.array([[1.0, 2.0], [3.0, 6.0]], np.float32)
        for _ in range(200):
            layer.forward(x)
        layer.eval()
        y, _ = layer.forward(np.array([[2.0, 4.0]], np.float32))
        np.testing.assert_allclose(y, np.zeros((1, 2)), atol=1e-4)
        self.assertEqual(len(layer.parameters()), 2)


class LSTMCellTests(SimpleTestCase):

    def test_zero_weights_zero_state(self):
        cell = LSTMCell(4, 3, np.random.default_rng(0))
        for p in cell.parameters():
            p.data = np.zeros_like(p.data)
        h, c = cell.initial_state(2)
        h1, c1, _ = cell.forward(np.ones((2, 4), np.float32), h, c)
        np.testing.assert_array_equal(h1, np.zeros((2, 3)))

    def test_cell_state_is_bounded(self):
        rng = np.random.default_rng(1)
        cell = LSTMCell(4, 3, rng)
        c = rng.normal(size=(5, 3)).astype(np.float32) * 3
        _, c1, _ = cell.forward(rng.normal(size=(5, 4)).astype(np.float32) * 10, rng.normal(size=(5, 3)).astype(np.float32), c)
        self.assertTrue(np.all(np.abs(c1) <= np.abs(c) + 1 + 1e-6))

    def test_unrolled_sequence_gradient_check(self):
        rng = np.random.default_rng(2)
        cell = LSTMCell(3, 4, rng).astype(np.float64)

        def run(inputs):
            h, c = inputs['h0'], inputs['c0']
            caches = []
            for step in range(3):
                h, c, cache = cell.forward(inputs['x'][step], h, c)
                caches.append(cache)
            loss, dh = projection_loss(h)

            def backward():
                dc = np.zeros_like(dh)
                dxs = [None] * 3
                dh_, dc_ = dh, dc
                for step in reversed(range(3)):
                    dxs[step], dh_, dc_ = cell.backward(dh_, dc_, caches[step])
                return {'x': np.stack(dxs), 'h0': dh_, 'c0': dc_}
            return loss, backward

        inputs = {'x': rng.normal(size=(3, 2, 3)), 'h0': rng.normal(size=(2, 4)), 'c0': rng.normal(size=(2, 4))}
        report = grad_check(run, cell.parameters(), inputs)
        self.assertTrue(report.passed, report.errors)

    def test_functional_step_matches_module(self):
        rng = np.random.default_rng(3)
        cell = LSTMCell(3, 4, rng).astype(np.float64)
        x, h, c = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
        h1, c1, _ = cell.forward(x, h, c)
        h2, c2 = lstm_cell(x, h, c, cell.state_dict())
        np.testing.assert_allclose(h2, h1, atol=1e-12)
        np.testing.assert_allclose(c2, c1, atol=1e-12)

    def test_shape_mismatch(self):
        cell = LSTMCell(3, 4, np.random.default_rng(0))
        h, c = cell.initial_state(1)
        with self.assertRaises(ShapeError):
            cell.forward(np.zeros((1, 5), np.float32), h, c)


class AdamTests(SimpleTestCase):

    def scalar(self, value):
        p = Parameter.of([value])
        p.name = 'w'
        return p

    def test_zero_gradient_leaves_parameters(self):
        p = self.scalar(1.5)
        adam_step([p], [np.zeros(1)], AdamState(), lr=0.1)
        self.assertEqual(p.data[0], np.float32(1.5))

    def test_first_step_moves_by_lr(self):
        p = self.scalar(1.0)
        adam_step([p], [np.ones(1)], AdamState(), lr=0.1)
        self.assertAlmostEqual(float(p.data[0]), 0.9, places=6)

    def test_step_is_deterministic(self):
        grads = np.random.default_rng(0).normal(size=(5, 1))
        runs = []
        for _ in range(2):
            p, state = self.scalar(0.3), AdamState()
            for g in grads:
                adam_step([p], [g], state, lr=0.01)
            runs.append(p.data.tobytes())
        self.assertEqual(runs[0], runs[1])

    def test_halving_schedule(self):
        self.assertEqual([halving_lr(1e-4, e, 2) for e in range(5)], [1e-4, 1e-4, 5e-5, 5e-5, 2.5e-5])


class CheckpointTests(SimpleTestCase):

    def model(self):
        class Tiny(Module):
            def __init__(self, rng):
                super().__init__()
                self.fc = self.child('fc', Linear(4, 3, rng))
                self.cell = self.child('cell', LSTMCell(3, 2, rng))
        return Tiny(np.random.default_rng(0))

    def test_round_trip_is_bit_exact(self):
        model = self.model()
        hidden = np.random.default_rng(1).normal(size=(1, 2)).astype(np.float32)
        optimizer = Adam(model, lr=0.01)
        for p in model.parameters():
            p.tensor.zero_grad()
            p.tensor.grad += 0.5
        optimizer.step()
        tensors = {**model.state_dict(), **optimizer.state_dict(), 'hidden': hidden}
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / 'model.ckpt', tensors, {'epoch': 1})
            loaded = load_checkpoint(path)
        self.assertEqual(loaded.metadata, {'epoch': 1})
        for name, array in tensors.items():
            self.assertEqual(loaded.tensors[name].tobytes(), np.asarray(array).tobytes(), name)
        restored = self.model()
        for p in restored.parameters():
            p.data = np.zeros_like(p.data)
        restored.load_state_dict({k: v for k, v in loaded.without('adam.').items() if k != 'hidden'})
        self.assertEqual(
            [a.tobytes() for a in restored.state_dict().values()],
            [a.tobytes() for a in model.state_dict().values()],
        )

    def test_corruption_is_detected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / 'x.ckpt', {'w': np.ones(3, np.float32)})
            raw = bytearray(path.read_bytes())
            raw[-8] ^= 0xFF
            path.write_bytes(bytes(raw))
            with self.assertRaises(CheckpointError):
                load_checkpoint(path)

    def test_state_mismatch_is_rejected(self):
        with self.assertRaises(ShapeError):
            self.model().load_state_dict({'fc.weight': np.zeros((4, 3), np.float32)})
