import numpy as np
from django.test import SimpleTestCase

from geometry.cameras import PointCloud
from geometry.transforms import RigidTransform
from matchnet.heads import MatchHeadOutput
from raster.maps import default_rig

from .losses import (
    LOG_FLOOR, LossWeights, calibration_loss, matching_loss, matching_loss_terms, pose_loss, smooth_l1,
    total_loss,
)
from .matches import (
    MatchMatrix, UniformGrid, gt_matches, reliability_filter, support_counts, support_counts_bruteforce,
)
from .noise_box import DegeneratePointError, noise_box, noise_boxes


def output_from_logs(log_p, log_not_i, log_not_r):
    log_p = np.asarray(log_p, dtype=np.float64)
    log_not_i = np.asarray(log_not_i, dtype=np.float64)
    log_not_r = np.asarray(log_not_r, dtype=np.float64)
    return MatchHeadOutput(log_p, log_not_i, log_not_r, 1.0 - np.exp(log_not_i), 1.0 - np.exp(log_not_r))


class NoiseBoxTests(SimpleTestCase):

    def test_height_is_fixed_by_constants(self):
        rng = np.random.default_rng(0)
        for p in rng.uniform(-30, 30, size=(20, 3)) + np.array([0, 0, 40]):
            self.assertEqual(noise_box(p, 1.0, 0.5).h_b, 3.0)

    def test_hand_computed_width(self):
        theta = np.radians(30.0)
        box = noise_box((10 * np.sin(theta), 0.0, 10 * np.cos(theta)), 1.0, 0.5)
        shrink = 1.0 - np.sqrt(0.99)
        self.assertAlmostEqual(shrink, 0.005013, places=6)
        self.assertAlmostEqual(box.w_b, 10 * 0.5 * shrink + 1.0, places=9)
        self.assertAlmostEqual(box.w_b, 1.02506, places=5)
        self.assertAlmostEqual(box.d_b, 10 * np.cos(theta) * shrink + 1.0, places=9)
        self.assertAlmostEqual(box.center[0], 5.0 - 10 * 0.5 * shrink / 2, places=9)

    def test_center_moves_toward_the_sensor(self):
        for p in [(-6.0, 0.5, 8.0), (6.0, -0.5, 8.0)]:
            box = noise_box(p, 1.0, 0.5)
            self.assertLess(abs(box.center[0]), abs(p[0]))
            self.assertLess(box.center[2], p[2])
            self.assertEqual(box.center[1], p[1])

    def test_degenerate_point(self):
        with self.assertRaises(DegeneratePointError):
            noise_box((0.5, 0.0, 0.5), 1.0, 0.5)
        with self.assertRaises(DegeneratePointError):
            noise_boxes([[0.0, 0.0, 20.0], [0.0, 0.0, 1.0]], 1.0, 0.5)

    def test_vectorised_matches_scalar(self):
        pts = np.random.default_rng(1).uniform(-20, 20, size=(50, 3)) + np.array([0, 0, 25])
        centers, half = noise_boxes(pts, 1.0, 0.5)
        for p, c, h in zip(pts, centers, half):
            box = noise_box(p, 1.0, 0.5)
            np.testing.assert_allclose(c, box.center, atol=1e-12)
            np.testing.assert_allclose(h, box.half_extents, atol=1e-12)

    def test_extents_monotone_in_delta_and_margin(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            p = rng.uniform(-30, 30, size=3) + np.array([0, 0, 35])
            d1, d2 = np.sort(rng.uniform(0.1, 2.0, size=2))
            s1, s2 = np.sort(rng.uniform(0.0, 1.0, size=2))
            a = noise_box(p, d1, s1)
            for b in (noise_box(p, d2, s1), noise_box(p, d1, s2)):
                self.assertLessEqual(a.h_b, b.h_b)
                self.assertLessEqual(a.w_b, b.w_b + 1e-12)
                self.assertLessEqual(a.d_b, b.d_b + 1e-12)

    def test_contains(self):
        box = noise_box((0.0, 0.0, 10.0), 1.0, 0.5)
        self.assertTrue(box.contains([box.center])[0])
        self.assertFalse(box.contains([[0.0, 5.0, 10.0]])[0])


class ReliabilityTests(SimpleTestCase):

    def test_empty_lidar_marks_everything_unreliable(self):
        radar = PointCloud([[0.0, 0.0, 10.0], [2.0, 0.0, 15.0]])
        out = reliability_filter(radar, PointCloud(np.zeros((0, 3)), 'lidar'))
        np.testing.assert_array_equal(out.reliable, [False, False])

    def test_colocated_lidar_support(self):
        radar = PointCloud([[0.0, 0.0, 10.0], [5.0, 0.0, 20.0]])
        lidar = PointCloud(np.array([[0.0, 0.0, 10.0]] * 3 + [[5.0, 0.0, 20.0]] * 2), 'lidar')
        out = reliability_filter(radar, lidar, tau=3)
        np.testing.assert_array_equal(out.reliable, [True, False])

    def test_points_within_delta_are_unreliable(self):
        radar = PointCloud([[0.0, 0.0, 0.5]])
        lidar = PointCloud(np.zeros((5, 3)) + [0.0, 0.0, 0.5], 'lidar')
        self.assertFalse(reliability_filter(radar, lidar).reliable[0])

    def test_grid_counts_equal_bruteforce(self):
        rng = np.random.default_rng(3)
        for trial in range(5):
            radar = rng.uniform([-20, -2, 2], [20, 2, 40], size=(500, 3))
            lidar = rng.uniform([-20, -2, 2], [20, 2, 40], size=(4000, 3))
            # plant some well-supported points
            lidar[:300] = radar[:100].repeat(3, axis=0) + rng.normal(0, 0.2, size=(300, 3))
            fast = support_counts(radar, lidar, 1.0, 0.5)
            slow = support_counts_bruteforce(radar, lidar, 1.0, 0.5)
            np.testing.assert_array_equal(fast, slow, err_msg=f"trial {trial}")

    def test_uniform_grid_query(self):
        pts = np.array([[0.0, 0.0, 0.0], [0.9, 0.0, 0.0], [3.0, 3.0, 3.0], [-0.5, 0.1, 0.2]])
        grid = UniformGrid(pts, 1.0)
        found = sorted(grid.query_box(np.zeros(3), np.array([1.0, 0.5, 0.5])).tolist())
        self.assertEqual(found, [0, 1, 3])
        self.assertEqual(len(grid.query_box(np.array([10.0, 10, 10]), np.ones(3))), 0)
        with self.assertRaises(ValueError):
            UniformGrid(pts, 0.0)


class MatchMatrixTests(SimpleTestCase):

    def test_no_match_vectors(self):
        m = MatchMatrix(np.array([[1, 0], [0, 0]]))
        np.testing.assert_array_equal(m.no_match_image, [0, 1])
        np.testing.assert_array_equal(m.no_match_radar, [0, 1])
        self.assertEqual(m.positives, 1)
        self.assertEqual(m.pairs(), [(0, 0)])

    def test_exclusivity_is_enforced(self):
        with self.assertRaises(ValueError):
            MatchMatrix(np.array([[1, 1], [0, 0]]))
        with self.assertRaises(ValueError):
            MatchMatrix(np.array([[1, 0], [1, 0]]))
        with self.assertRaises(ValueError):
            MatchMatrix(np.array([[2, 0], [0, 0]]))

    def test_from_pairs(self):
        m = MatchMatrix.from_pairs(3, [(0, 2), (2, 1)])
        self.assertEqual(m.pairs(), [(0, 2), (2, 1)])


class GtMatchesTests(SimpleTestCase):

    def setUp(self):
        self.rig = default_rig()
        self.fv_grid = (6, 12)
        self.bev_grid = (12, 12)

    def test_single_point_hand_computed_fv(self):
        radar = PointCloud([[0.0, 0.0, 10.0]])
        t_gt = RigidTransform.identity()
        t_curr = RigidTransform.from_rotvec(np.zeros(3), (1.0, 0.0, 0.0))
        m = gt_matches(radar, t_gt, t_curr, self.rig.k, self.fv_grid, 'FV', reliable_only=False)
        # true pixel (48, 24) -> cell (3, 6); current pixel (56, 24) -> cell (3, 7)
        self.assertEqual(m.pairs(), [(3 * 12 + 6, 3 * 12 + 7)])

    def test_single_point_hand_computed_bev(self):
        radar = PointCloud([[0.0, 0.0, 9.0]])
        t_curr = RigidTransform.from_rotvec(np.zeros(3), (0.0, 0.0, 4.0))
        m = gt_matches(radar, RigidTransform.identity(), t_curr, self.rig.k_bev, self.bev_grid, 'BEV',
                       cam_height=self.rig.cam_height)
        # true (u, v) = (48, 36) -> cell (4, 6); current (48, 52) -> cell (6, 6)
        self.assertEqual(m.pairs(), [(4 * 12 + 6, 6 * 12 + 6)])

    def test_identical_extrinsics_give_diagonal_pairs(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform([-10, -1, 5], [10, 1, 40], size=(60, 3))
        t = RigidTransform.from_euler((1.0, -2.0, 0.5), (0.1, -0.9, 0.2), degrees=True)
        for view, k, grid in (('FV', self.rig.k, self.fv_grid), ('BEV', self.rig.k_bev, self.bev_grid)):
            m = gt_matches(PointCloud(pts), t, t, k, grid, view, cam_height=self.rig.cam_height)
            self.assertGreater(m.positives, 0)
            self.assertTrue(all(i == j for i, j in m.pairs()))

    def test_reliable_only_applies_to_fv(self):
        radar = PointCloud([[0.0, 0.0, 10.0]], reliable=[False])
        t = RigidTransform.identity()
        fv = gt_matches(radar, t, t, self.rig.k, self.fv_grid, 'FV', reliable_only=True)
        self.assertEqual(fv.positives, 0)
        fv_all = gt_matches(radar, t, t, self.rig.k, self.fv_grid, 'FV', reliable_only=False)
        self.assertEqual(fv_all.positives, 1)
        bev = gt_matches(radar, t, t, self.rig.k_bev, self.bev_grid, 'BEV', cam_height=1.5)
        self.assertEqual(bev.positives, 1)

    def test_nearest_point_wins_a_collision(self):
        # same true cell, different current cells; the nearer one is kept
        radar = PointCloud([[0.0, 0.0, 20.0], [0.0, 0.0, 10.0]])
        t_gt = RigidTransform.identity()
        t_curr = RigidTransform.from_rotvec(np.zeros(3), (2.0, 0.0, 0.0))
        m = gt_matches(radar, t_gt, t_curr, self.rig.k, self.fv_grid, 'FV', reliable_only=False)
        # near point: u = 80·2/10 + 48 = 64 -> column 8
        self.assertEqual(m.pairs(), [(3 * 12 + 6, 3 * 12 + 8)])

    def test_no_valid_points(self):
        radar = PointCloud([[0.0, 0.0, -5.0]])
        t = RigidTransform.identity()
        m = gt_matches(radar, t, t, self.rig.k, self.fv_grid, 'FV', reliable_only=False)
        self.assertEqual(m.positives, 0)
        self.assertEqual(m.m.shape, (72, 72))
        with self.assertRaises(ValueError):
            gt_matches(radar, t, t, self.rig.k, self.fv_grid, 'side')


class MatchingLossTests(SimpleTestCase):

    def setUp(self):
        self.gt = MatchMatrix(np.array([[1, 0], [0, 0]]))

    def test_perfect_prediction_is_zero(self):
        out = output_from_logs([[0.0, -50.0], [-50.0, -50.0]], [-5.0, 0.0], [-5.0, 0.0])
        loss, _ = matching_loss_terms(out, self.gt, 0.75)
        self.assertEqual(loss, 0.0)

    def test_single_positive_closed_form(self):
        out = output_from_logs([[-1.0, -3.0], [-3.0, -3.0]], [-5.0, -0.7], [-5.0, -0.2])
        loss, _ = matching_loss([out], [self.gt], lam=1.0)
        self.assertAlmostEqual(loss, 1.0, places=9)

    def test_lambda_zero_keeps_only_negatives(self):
        out = output_from_logs([[-1.0, -3.0], [-3.0, -3.0]], [-5.0, -0.7], [-5.0, -0.2])
        loss, grad = matching_loss_terms(out, self.gt, 0.0)
        self.assertAlmostEqual(loss, (0.7 + 0.2) / 2, places=9)
        np.testing.assert_array_equal(grad.d_log_p, np.zeros((2, 2)))

    def test_no_positives_skips_positive_term(self):
        empty = MatchMatrix(np.zeros((2, 2)))
        out = output_from_logs(np.full((2, 2), -2.0), [-0.1, -0.3], [-0.2, -0.4])
        loss, grad = matching_loss_terms(out, empty, 0.75)
        self.assertAlmostEqual(loss, 0.25 * (0.1 + 0.3 + 0.2 + 0.4) / 4, places=9)
        np.testing.assert_array_equal(grad.d_log_p, np.zeros((2, 2)))

    def test_clamped_logs(self):
        out = output_from_logs([[-1e6, -3.0], [-3.0, -3.0]], [-5.0, 0.0], [-5.0, 0.0])
        loss, grad = matching_loss_terms(out, self.gt, 1.0)
        self.assertAlmostEqual(loss, -LOG_FLOOR, places=6)
        self.assertEqual(grad.d_log_p[0, 0], 0.0)

    def test_loss_is_non_negative_and_sums_iterations(self):
        rng = np.random.default_rng(5)
        outs = [output_from_logs(-rng.uniform(0, 5, (2, 2)), -rng.uniform(0, 3, 2), -rng.uniform(0, 3, 2))
                for _ in range(3)]
        total, grads = matching_loss(outs, [self.gt] * 3)
        self.assertGreaterEqual(total, 0.0)
        self.assertEqual(len(grads), 3)
        parts = sum(matching_loss_terms(o, self.gt, 0.75)[0] for o in outs)
        self.assertAlmostEqual(total, parts, places=12)
        with self.assertRaises(ValueError):
            matching_loss(outs, [self.gt] * 2)
        with self.assertRaises(ValueError):
            matching_loss(outs, [self.gt] * 3, lam=1.5)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        log_p = -rng.uniform(0.1, 4, (2, 2))
        log_ni, log_nr = -rng.uniform(0.1, 3, 2), -rng.uniform(0.1, 3, 2)
        _, grad = matching_loss_terms(output_from_logs(log_p, log_ni, log_nr), self.gt, 0.75)
        eps = 1e-6
        for arr, analytic in ((log_p, grad.d_log_p), (log_ni, grad.d_not_i), (log_nr, grad.d_not_r)):
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + eps
                plus, _ = matching_loss_terms(output_from_logs(log_p, log_ni, log_nr), self.gt, 0.75)
                arr[idx] = orig - eps
                minus, _ = matching_loss_terms(output_from_logs(log_p, log_ni, log_nr), self.gt, 0.75)
                arr[idx] = orig
                self.assertAlmostEqual(analytic[idx], (plus - minus) / (2 * eps), places=6)


class CalibrationLossTests(SimpleTestCase):

    def test_smooth_l1(self):
        value, grad = smooth_l1(np.array([-2.0, 0.01, 0.0]), 0.05)
        np.testing.assert_allclose(value, [1.975, 0.001, 0.0])
        np.testing.assert_allclose(grad, [-1.0, 0.2, 0.0])

    def test_exact_predictions_give_zero(self):
        t_gt = RigidTransform.from_euler((3.0, -2.0, 1.0), (0.2, -0.8, 0.1), degrees=True)
        t0 = RigidTransform.identity()
        residual = t0.inverse() @ t_gt
        loss, d_rots, d_trans = calibration_loss([residual.rotvec], [residual.translation], t_gt, [t0])
        self.assertAlmostEqual(loss, 0.0, places=12)
        np.testing.assert_allclose(d_rots[0], np.zeros(3), atol=1e-9)

    def test_identity_against_identity_residual(self):
        t = RigidTransform.from_euler((1.0, 2.0, 3.0), (1.0, 0.0, 0.0), degrees=True)
        loss, _, _ = calibration_loss([np.zeros(3)] * 2, [np.zeros(3)] * 2, t, [t, t])
        self.assertAlmostEqual(loss, 0.0, places=12)

    def test_single_iteration_is_pose_loss(self):
        t_gt = RigidTransform.from_euler((4.0, 0.0, -2.0), (0.3, -0.9, 0.0), degrees=True)
        rot, trans = np.array([0.01, 0.02, -0.03]), np.array([0.1, 0.0, -0.2])
        loss, _, _ = calibration_loss([rot], [trans], t_gt, [RigidTransform.identity()])
        expected, _, _ = pose_loss(rot, trans, t_gt)
        self.assertAlmostEqual(loss, expected, places=12)

    def test_iteration_weights(self):
        t_gt = RigidTransform.from_rotvec((0.0, 0.2, 0.0), (0.5, 0.0, 0.0))
        t0 = RigidTransform.identity()
        zeros = [np.zeros(3), np.zeros(3)]
        loss, _, _ = calibration_loss(zeros, zeros, t_gt, [t0, t0])
        single, _, _ = pose_loss(np.zeros(3), np.zeros(3), t_gt)
        self.assertAlmostEqual(loss, 0.5 * single + 1.0 * single, places=12)
        with self.assertRaises(ValueError):
            calibration_loss(zeros, zeros[:1], t_gt, [t0, t0])

    def test_pose_loss_gradient(self):
        residual = RigidTransform.from_rotvec((0.1, -0.2, 0.15), (0.3, -0.1, 0.05))
        rng = np.random.default_rng(7)
        eps = 1e-6
        for beta in (0.05, 1.0):
            rot, trans = rng.normal(0, 0.2, 3), rng.normal(0, 0.2, 3)
            _, d_rot, d_trans = pose_loss(rot, trans, residual, beta, 0.05)
            for k in range(3):
                step = np.eye(3)[k] * eps
                num_r = (pose_loss(rot + step, trans, residual, beta)[0]
                         - pose_loss(rot - step, trans, residual, beta)[0]) / (2 * eps)
                num_t = (pose_loss(rot, trans + step, residual, beta)[0]
                         - pose_loss(rot, trans - step, residual, beta)[0]) / (2 * eps)
                self.assertAlmostEqual(d_rot[k], num_r, places=5)
                self.assertAlmostEqual(d_trans[k], num_t, places=5)


class TotalLossTests(SimpleTestCase):

    def test_examples(self):
        self.assertEqual(total_loss(1.0, 2.0, 0.0), 1.0)
        self.assertAlmostEqual(total_loss(1.0, 2.0, 0.1), 1.2)
        with self.assertRaises(ValueError):
            total_loss(1.0, 2.0, -0.1)

    def test_weights_validation(self):
        self.assertEqual(LossWeights(), LossWeights(0.75, 0.1))
        with self.assertRaises(ValueError):
            LossWeights(lam=1.5)
        with self.assertRaises(ValueError):
            LossWeights(beta=-1.0)
