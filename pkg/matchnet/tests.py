import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from kernels import functional as F
from kernels.gradcheck import grad_check, jitter_parameters, projection_loss
from kernels.tensor import ShapeError
from raster.export import read_float_blob, read_pgm

from .aggregate import ResidualConvBlock, residual_conv_block
from .attention import CrossAttention, attention_heatmaps, mca
from .export import export_heatmap, upsample
from .extractor import RADAR_CHANNELS, ImageExtractor, RadarExtractor, extract_features, from_tokens, to_tokens
from .heads import MatchHead, MatchHeadOutput, match_head


def tokens(rng, b, m, c):
    return rng.normal(size=(b, m, c))


class ExtractorTests(SimpleTestCase):

    def test_default_rig_grids(self):
        rng = np.random.default_rng(0)
        radar = RadarExtractor(8, rng, 'FV')
        image = ImageExtractor(8, rng, 'FV', with_context=True)
        fv = np.zeros((2, 1, 48, 96), np.float32)
        radar_fv = np.zeros((2, RADAR_CHANNELS, 48, 96), np.float32)
        self.assertEqual(extract_features(radar, radar_fv).tensor.shape, (2, 8, 6, 12))
        self.assertEqual(extract_features(image, fv, fv).tensor.shape, (2, 8, 6, 12))
        bev = np.zeros((1, RADAR_CHANNELS, 96, 96), np.float32)
        grid = extract_features(RadarExtractor(8, rng, 'BEV'), bev)
        self.assertEqual(grid.spatial, (12, 12))
        self.assertEqual((grid.view, grid.source), ('BEV', 'radar'))

    def test_map_not_divisible_by_stride(self):
        radar = RadarExtractor(4, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            radar.forward(np.zeros((1, RADAR_CHANNELS, 20, 16)))

    def test_context_stack_contributes(self):
        rng = np.random.default_rng(1)
        image = ImageExtractor(4, rng, 'FV', with_context=True)
        x = rng.normal(size=(1, 1, 16, 16))
        without = extract_features(image, x).tensor
        with_ctx = extract_features(image, x, rng.normal(size=(1, 1, 16, 16))).tensor
        self.assertFalse(np.allclose(without, with_ctx))

    def test_every_pixel_reaches_the_image_grid(self):
        image = ImageExtractor(4, np.random.default_rng(3)).astype(np.float64)
        base = extract_features(image, np.zeros((1, 1, 16, 16))).tensor
        for row, col in ((0, 0), (2, 2), (3, 6), (15, 15)):
            x = np.zeros((1, 1, 16, 16))
            x[0, 0, row, col] = 1.0
            self.assertFalse(np.allclose(extract_features(image, x).tensor, base), (row, col))

    def test_context_shape_mismatch(self):
        image = ImageExtractor(4, np.random.default_rng(0), with_context=True)
        with self.assertRaises(ShapeError):
            image.forward(np.zeros((1, 1, 16, 16)), np.zeros((1, 1, 16, 24)))

    def test_tokens_layout(self):
        grid = np.arange(2 * 3 * 2 * 2, dtype=np.float64).reshape(2, 3, 2, 2)
        t = to_tokens(grid)
        self.assertEqual(t.shape, (2, 4, 3))
        np.testing.assert_array_equal(t[0, 1], grid[0, :, 0, 1])
        np.testing.assert_array_equal(from_tokens(t, 2, 2), grid)

    def test_extractor_gradients(self):
        rng = np.random.default_rng(2)
        radar = RadarExtractor(4, rng).astype(np.float64)
        image = ImageExtractor(4, rng, with_context=True).astype(np.float64)

        def run(inputs):
            g_r, c_r = radar.forward(inputs['radar'])
            g_i, c_i = image.forward(inputs['image'], inputs['context'])
            l1, d1 = projection_loss(g_r.tensor, 1)
            l2, d2 = projection_loss(g_i.tensor, 2)

            def backward():
                d_image, d_context = image.backward(d2, c_i)
                return {'radar': radar.backward(d1, c_r), 'image': d_image, 'context': d_context}
            return l1 + l2, backward

        inputs = {k: rng.uniform(0.5, 2.0, size=(2, 1, 16, 16)) for k in ('image', 'context')}
        inputs['radar'] = rng.uniform(0.5, 2.0, size=(2, RADAR_CHANNELS, 16, 16))
        report = grad_check(run, radar.parameters() + image.parameters(), inputs, name='extractors')
        self.assertTrue(report.passed, report.errors)


class CrossAttentionTests(SimpleTestCase):

    def test_identity_at_initialisation(self):
        rng = np.random.default_rng(0)
        block = CrossAttention(8, rng)
        f_i, f_r = tokens(rng, 2, 6, 8), tokens(rng, 2, 6, 8)
        hat_i, hat_r, _ = mca(block, f_i, f_r)
        np.testing.assert_allclose(hat_i, f_i)
        np.testing.assert_allclose(hat_r, f_r)

    def test_attention_rows_are_distributions(self):
        rng = np.random.default_rng(1)
        block = jitter_parameters(CrossAttention(8, rng), seed=1)
        _, _, scores = mca(block, tokens(rng, 1, 6, 8), tokens(rng, 1, 6, 8))
        np.testing.assert_allclose(scores.image_attn.sum(axis=-1), np.ones((1, 6)), atol=1e-9)
        np.testing.assert_allclose(scores.radar_attn.sum(axis=-1), np.ones((1, 6)), atol=1e-9)
        np.testing.assert_allclose(scores.radar_attn, np.exp(scores.scores.transpose(0, 2, 1))
                                   / np.exp(scores.scores.transpose(0, 2, 1)).sum(-1, keepdims=True))

    def test_scaled_scores(self):
        rng = np.random.default_rng(2)
        f_i, f_r = tokens(rng, 1, 4, 16), tokens(rng, 1, 4, 16)
        plain = CrossAttention(16, np.random.default_rng(3))
        scaled = CrossAttention(16, np.random.default_rng(3), scaled_scores=True)
        np.testing.assert_allclose(mca(scaled, f_i, f_r)[2].scores, mca(plain, f_i, f_r)[2].scores / 4.0)

    def test_rejects_mismatched_tokens(self):
        block = CrossAttention(4, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            block.forward(np.zeros((1, 6, 4)), np.zeros((1, 5, 4)))

    def test_heatmaps(self):
        rng = np.random.default_rng(4)
        scores = rng.normal(size=(6, 6))
        image, radar = attention_heatmaps(scores, 2, 3)
        self.assertEqual(image.shape, (2, 3))
        for heat in (image, radar):
            self.assertTrue(np.all(heat > 0) and np.all(heat <= 1))
        batched, _ = attention_heatmaps(scores[None], 2, 3)
        np.testing.assert_allclose(batched[0], image)
        # uniform scores give uniform attention
        flat, _ = attention_heatmaps(np.zeros((4, 4)), 2, 2)
        np.testing.assert_allclose(flat, np.full((2, 2), 0.25))
        dominant = np.zeros((4, 4))
        dominant[:, 2] = 20.0
        peak, _ = attention_heatmaps(dominant, 2, 2)
        self.assertTrue(np.all(peak > 0.999))
        with self.assertRaises(ShapeError):
            attention_heatmaps(scores, 2, 2)

    def test_gradients(self):
        rng = np.random.default_rng(5)
        block = jitter_parameters(CrossAttention(4, rng).astype(np.float64), seed=5, scale=0.3)

        def run(inputs):
            hat_i, hat_r, _, cache = block.forward(inputs['f_i'], inputs['f_r'])
            l1, d1 = projection_loss(hat_i, 1)
            l2, d2 = projection_loss(hat_r, 2)

            def backward():
                df_i, df_r = block.backward(d1, d2, cache)
                return {'f_i': df_i, 'f_r': df_r}
            return l1 + l2, backward

        inputs = {'f_i': tokens(rng, 2, 6, 4), 'f_r': tokens(rng, 2, 6, 4)}
        report = grad_check(run, block.parameters(), inputs, name='mca')
        self.assertTrue(report.passed, report.errors)


class ResidualConvBlockTests(SimpleTestCase):

    def test_output_shape(self):
        rng = np.random.default_rng(0)
        block = ResidualConvBlock(8, 6, 12, 32, rng)
        y = residual_conv_block(block, rng.normal(size=(3, 8, 6, 12)), rng.normal(size=(3, 8, 6, 12)))
        self.assertEqual(y.shape, (3, 32))

    def test_rejects_wrong_grid(self):
        block = ResidualConvBlock(4, 2, 2, 8, np.random.default_rng(0))
        with self.assertRaises(ShapeError):
            block.forward(np.zeros((1, 4, 2, 3)), np.zeros((1, 4, 2, 3)))

    def test_branches_are_summed_before_activation(self):
        rng = np.random.default_rng(4)
        block = ResidualConvBlock(3, 2, 3, 5, rng).astype(np.float64)
        hat_i, hat_r = rng.normal(size=(2, 3, 2, 3)), rng.normal(size=(2, 3, 2, 3))
        x = np.concatenate([hat_i, hat_r], axis=1)
        pa = block.conv_a.forward(x)[0]
        pc = block.conv_c.forward(F.leaky_relu(block.conv_b.forward(x)[0]))[0]
        u = block.fc1.forward(F.leaky_relu(pa + pc).reshape(2, -1))[0]
        expected = block.fc2.forward(F.leaky_relu(u))[0]
        np.testing.assert_allclose(residual_conv_block(block, hat_i, hat_r), expected, atol=1e-12)

        per_branch = F.leaky_relu(F.leaky_relu(pa) + F.leaky_relu(pc))
        self.assertFalse(np.allclose(per_branch, F.leaky_relu(pa + pc)))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        block = ResidualConvBlock(3, 2, 3, 5, rng).astype(np.float64)

        def run(inputs):
            y, cache = block.forward(inputs['hat_i'], inputs['hat_r'])
            loss, dy = projection_loss(y)

            def backward():
                d_i, d_r = block.backward(dy, cache)
                return {'hat_i': d_i, 'hat_r': d_r}
            return loss, backward

        inputs = {'hat_i': rng.normal(size=(2, 3, 2, 3)), 'hat_r': rng.normal(size=(2, 3, 2, 3))}
        report = grad_check(run, block.parameters(), inputs, name='residual block')
        self.assertTrue(report.passed, report.errors)


class MatchHeadTests(SimpleTestCase):

    def test_probabilities_are_bounded(self):
        rng = np.random.default_rng(0)
        head = MatchHead(8, rng)
        out = match_head(head, tokens(rng, 2, 10, 8) * 3, tokens(rng, 2, 10, 8) * 3)
        p = out.p
        self.assertEqual(p.shape, (2, 10, 10))
        self.assertTrue(np.all(p >= 0) and np.all(p <= 1))
        self.assertTrue(np.all(out.log_p <= 0))
        # each row mass is at most σ_I of that image token
        self.assertTrue(np.all(p.sum(axis=-1) <= out.sigma_i + 1e-9))
        self.assertTrue(np.all(p.sum(axis=-2) <= out.sigma_r + 1e-9))
        np.testing.assert_allclose(np.exp(out.log_not_sigma_i), 1.0 - out.sigma_i)

    def test_invariants_over_random_trials(self):
        rng = np.random.default_rng(7)
        head = jitter_parameters(MatchHead(4, rng), seed=7, scale=1.0)
        out = match_head(head, tokens(rng, 10_000, 6, 4) * 2, tokens(rng, 10_000, 6, 4) * 2)
        p = out.p
        self.assertTrue(np.all((p >= 0) & (p <= 1)))
        self.assertLessEqual(float(p.sum(axis=-1).max()), 1 + 1e-5)
        self.assertLessEqual(float(p.sum(axis=-2).max()), 1 + 1e-5)

    def test_permuting_radar_tokens_permutes_columns(self):
        rng = np.random.default_rng(8)
        head = MatchHead(4, rng)
        f_i, f_r = tokens(rng, 1, 7, 4), tokens(rng, 1, 7, 4)
        base = match_head(head, f_i, f_r).log_p
        for _ in range(20):
            perm = rng.permutation(7)
            np.testing.assert_allclose(match_head(head, f_i, f_r[:, perm]).log_p, base[:, :, perm], atol=1e-6)

    def test_single_token_with_certain_scores(self):
        head = MatchHead(2, np.random.default_rng(0))
        head.score.bias.data = np.array([60.0])
        out = match_head(head, np.zeros((1, 1, 2)), np.zeros((1, 1, 2)))
        np.testing.assert_allclose(out.p, np.ones((1, 1, 1)), atol=1e-12)
        head.score.bias.data = np.array([-60.0])
        out = match_head(head, np.zeros((1, 1, 2)), np.zeros((1, 1, 2)))
        np.testing.assert_allclose(out.p, np.zeros((1, 1, 1)), atol=1e-12)

    def test_dominant_pair_gets_highest_probability(self):
        c = 4
        f = np.zeros((1, 3, c))
        f[0, :, :3] = np.eye(3) * 5.0
        head = MatchHead(c, np.random.default_rng(0))
        head.proj.weight.data = np.eye(c)
        head.proj.bias.data = np.zeros(c)
        out = match_head(head, f, f)
        self.assertEqual(list(out.p[0].argmax(axis=1)), [0, 1, 2])

    def test_sample_and_from_probabilities(self):
        rng = np.random.default_rng(1)
        out = match_head(MatchHead(4, rng), tokens(rng, 2, 3, 4), tokens(rng, 2, 3, 4))
        one = out.sample(1)
        self.assertEqual(one.log_p.shape, (3, 3))
        rebuilt = MatchHeadOutput.from_probabilities(one.p, one.sigma_i, one.sigma_r)
        np.testing.assert_allclose(rebuilt.log_p, one.log_p, atol=1e-9)
        zero = MatchHeadOutput.from_probabilities(np.zeros((2, 2)), np.ones(2), np.ones(2))
        self.assertTrue(np.all(np.isfinite(zero.log_p)))

    def test_gradients(self):
        rng = np.random.default_rng(2)
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

        inputs = {'hat_i': tokens(rng, 2, 5, 4), 'hat_r': tokens(rng, 2, 5, 4)}
        report = grad_check(run, head.parameters(), inputs, name='match head')
        self.assertTrue(report.passed, report.errors)


class HeatmapExportTests(SimpleTestCase):

    def test_upsample(self):
        heat = np.array([[0.0, 1.0]])
        up = upsample(heat, 2)
        self.assertEqual(up.shape, (2, 4))
        np.testing.assert_array_equal(up[:, 2:], np.ones((2, 2)))

    def test_export_writes_blob_and_image(self):
        heat = np.linspace(0.1, 1.0, 6, dtype=np.float32).reshape(2, 3)
        with tempfile.TemporaryDirectory() as tmp:
            pgm, blob = export_heatmap(heat, Path(tmp) / 'attn', marks=[(0, 0)])
            self.assertTrue(pgm.is_file() and blob.is_file())
            np.testing.assert_array_equal(read_float_blob(blob, (2, 3)), heat)
            self.assertEqual(read_pgm(pgm).shape, (16, 24))
