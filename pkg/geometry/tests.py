import numpy as np
from django.test import SimpleTestCase

from .cameras import (
    BevIntrinsics, CameraIntrinsics, PointCloud, ProjectionError,
    project_bev, project_fv, project_fv_many, transform_points,
    unproject_depth, unproject_depth_many,
)
from .metrics import calibration_error
from .transforms import (
    MISCALIBRATION_RANGES, RigidTransform, euler_to_matrix, matrix_to_euler,
    matrix_to_rotvec, perturb, right_jacobian, rotvec_to_matrix, sample_miscalibration,
)

K = CameraIntrinsics(fx=100.0, fy=100.0, cx=200.0, cy=96.0)


def random_transform(rng, rot=np.pi, trans=3.0):
    v = rng.normal(size=3)
    v *= rng.uniform(0, rot) / np.linalg.norm(v)
    return RigidTransform.from_rotvec(v, rng.uniform(-trans, trans, 3))


class RigidTransformTests(SimpleTestCase):

    def test_compose_is_associative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b, c = (random_transform(rng) for _ in range(3))
            self.assertTrue(a.compose(b.compose(c)).allclose(a.compose(b).compose(c)))

    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            t = random_transform(rng)
            self.assertTrue(t.compose(t.inverse()).allclose(RigidTransform.identity()))

    def test_orthonormality_survives_long_chains(self):
        rng = np.random.default_rng(2)
        t = RigidTransform.identity()
        for _ in range(500):
            t = (t @ random_transform(rng, rot=0.3, trans=0.1)).orthonormalized()
        self.assertLess(t.orthonormality_error(), 1e-9)
        self.assertAlmostEqual(np.linalg.det(t.rotation), 1.0, delta=1e-9)

    def test_rotvec_round_trip(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            v = rng.normal(size=3)
            v *= rng.uniform(0, np.pi - 0.05) / np.linalg.norm(v)
            np.testing.assert_allclose(matrix_to_rotvec(rotvec_to_matrix(v)), v, atol=1e-7)

    def test_euler_round_trip_away_from_gimbal(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            e = np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.4, 1.4), rng.uniform(-np.pi, np.pi)])
            np.testing.assert_allclose(matrix_to_euler(euler_to_matrix(e)), e, atol=1e-7)

    def test_matrix_serialization_round_trip(self):
        t = random_transform(np.random.default_rng(5))
        self.assertTrue(RigidTransform.from_matrix(t.as_row_major()).allclose(t, atol=0))

    def test_right_jacobian_matches_finite_difference(self):
        rng = np.random.default_rng(6)
        v = rng.normal(size=3) * 0.7
        jr = right_jacobian(v)
        r0 = rotvec_to_matrix(v)
        eps = 1e-6
        for k in range(3):
            d = np.zeros(3)
            d[k] = eps
            numeric = matrix_to_rotvec(r0.T @ rotvec_to_matrix(v + d)) / eps
            np.testing.assert_allclose(numeric, jr[:, k], atol=1e-5)


class TransformPointsTests(SimpleTestCase):

    def test_identity_leaves_cloud_unchanged(self):
        cloud = PointCloud(np.random.default_rng(0).normal(size=(10, 3)), 'lidar')
        out = transform_points(cloud, RigidTransform.identity())
        np.testing.assert_array_equal(out.points, cloud.points)
        self.assertEqual(out.sensor, 'lidar')

    def test_pure_translation(self):
        out = transform_points(PointCloud([[0.0, 0.0, 0.0]]), RigidTransform(np.eye(3), [1.0, 0.0, 0.0]))
        np.testing.assert_array_equal(out.points[0], [1.0, 0.0, 0.0])

    def test_quarter_turn_about_z(self):
        t = RigidTransform.from_euler([0.0, 0.0, 90.0], degrees=True)
        out = transform_points(PointCloud([[1.0, 0.0, 0.0]]), t)
        np.testing.assert_allclose(out.points[0], [0.0, 1.0, 0.0], atol=1e-12)

    def test_rejects_non_finite_points(self):
        with self.assertRaises(ValueError):
            PointCloud([[np.nan, 0.0, 1.0]])


class ProjectionTests(SimpleTestCase):

    def test_project_fv_scalar_example(self):
        self.assertEqual(project_fv((1.0, 0.5, 10.0), K), (210.0, 101.0, 10.0))

    def test_project_fv_optical_axis(self):
        self.assertEqual(project_fv((0.0, 0.0, 7.0), K), (200.0, 96.0, 7.0))

    def test_project_fv_rejects_zero_depth(self):
        self.assertIsNone(project_fv((1.0, 1.0, 0.0), K))
        self.assertIsNone(project_fv((1.0, 1.0, -3.0), K))

    def test_project_bev_scalar_example(self):
        kb = BevIntrinsics(sx=2.0, sz=2.0, cx=100.0, cz=0.0)
        u, v, value = project_bev((1.0, -1.0, 10.0), kb, 1.5)
        self.assertEqual((u, v), (102.0, 20.0))
        self.assertAlmostEqual(value, 0.5)
        self.assertEqual(project_bev((0.0, 0.0, 0.0), kb, 1.5), (100.0, 0.0, 1.5))
        self.assertEqual(project_bev((3.0, -1.5, 4.0), kb, 1.5)[2], 0.0)

    def test_unproject_examples(self):
        np.testing.assert_array_equal(unproject_depth(200.0, 96.0, 4.0, K), [0.0, 0.0, 4.0])
        np.testing.assert_allclose(unproject_depth(210.0, 101.0, 10.0, K), [1.0, 0.5, 10.0])
        with self.assertRaises(ProjectionError):
            unproject_depth(10.0, 10.0, 0.0, K)

    def test_project_unproject_round_trip(self):
        rng = np.random.default_rng(7)
        u = rng.uniform(0, 400, 10_000)
        v = rng.uniform(0, 192, 10_000)
        d = rng.uniform(0.01, 200.0, 10_000)
        pu, pv, pd, valid = project_fv_many(unproject_depth_many(u, v, d, K), K)
        self.assertTrue(valid.all())
        np.testing.assert_allclose(pu, u, atol=1e-6)
        np.testing.assert_allclose(pv, v, atol=1e-6)
        np.testing.assert_allclose(pd, d, atol=1e-6)

    def test_intrinsics_validation(self):
        with self.assertRaises(ValueError):
            CameraIntrinsics(0.0, 1.0, 0.0, 0.0)
        with self.assertRaises(ValueError):
            BevIntrinsics(1.0, -1.0, 0.0, 0.0)


class MiscalibrationTests(SimpleTestCase):

    def test_zero_range_is_identity(self):
        t = sample_miscalibration(0.0, 0.0, 11)
        np.testing.assert_array_equal(t.rotation, np.eye(3))
        np.testing.assert_array_equal(t.translation, np.zeros(3))

    def test_named_ranges(self):
        self.assertEqual(MISCALIBRATION_RANGES['R1'], (10.0, 0.25))
        self.assertEqual(MISCALIBRATION_RANGES['R2'], (20.0, 1.5))

    def test_samples_stay_in_range_and_reproduce(self):
        for seed in range(100):
            t = sample_miscalibration(20.0, 1.5, seed)
            self.assertTrue(np.all(np.abs(np.degrees(t.euler)) <= 20.0 + 1e-9))
            self.assertTrue(np.all(np.abs(t.translation) <= 1.5))
            again = sample_miscalibration(20.0, 1.5, seed)
            self.assertEqual(t.as_matrix().tobytes(), again.as_matrix().tobytes())

    def test_negative_range_rejected(self):
        with self.assertRaises(ValueError):
            sample_miscalibration(-1.0, 0.0, 0)

    def test_perturb_composes_rotation_on_the_right(self):
        gt = RigidTransform.from_euler([5.0, 0.0, 0.0], [1.0, 2.0, 3.0], degrees=True)
        delta = RigidTransform.from_euler([0.0, 3.0, 0.0], [0.1, 0.0, 0.0], degrees=True)
        out = perturb(gt, delta)
        np.testing.assert_allclose(out.rotation, gt.rotation @ delta.rotation)
        np.testing.assert_allclose(out.translation, [1.1, 2.0, 3.0])


class CalibrationErrorTests(SimpleTestCase):

    def test_equal_transforms_have_zero_error(self):
        t = random_transform(np.random.default_rng(8))
        err = calibration_error(t, t)
        np.testing.assert_array_equal(err.trans_abs, np.zeros(3))
        np.testing.assert_allclose(err.euler_abs, np.zeros(3), atol=1e-12)

    def test_mean_rotation_error(self):
        pred = RigidTransform.from_euler([1.0, 2.0, 3.0], degrees=True)
        err = calibration_error(pred, RigidTransform.identity())
        self.assertAlmostEqual(np.degrees(err.mean_rotation), 2.0, places=9)

    def test_translation_error_in_centimeters(self):
        pred = RigidTransform(np.eye(3), [0.1, 0.0, 0.0])
        row = calibration_error(pred, RigidTransform.identity()).as_report_row()
        self.assertAlmostEqual(row['x_cm'], 10.0)
        self.assertAlmostEqual(row['trans_mean_cm'], 10.0 / 3.0)
