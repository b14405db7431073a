import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from geometry.cameras import BevIntrinsics, CameraIntrinsics, PointCloud, unproject_depth
from geometry.transforms import RigidTransform

from .export import export_map, read_float_blob, read_pgm
from .maps import (
    InfoMap, default_rig, depth_to_grayscale, depth_to_pseudo_bev, radar_input, rasterize_bev, rasterize_fv,
    residual_map, scaled_rig,
)

K = CameraIntrinsics(fx=80.0, fy=80.0, cx=48.0, cy=24.0)
KB = BevIntrinsics(sx=2.0, sz=2.0, cx=48.0, cz=0.0)
IDENTITY = RigidTransform.identity()


class RasterizeFvTests(SimpleTestCase):

    def test_empty_cloud_gives_zero_map(self):
        out = rasterize_fv(PointCloud(np.zeros((0, 3))), IDENTITY, K, 48, 96)
        self.assertEqual(out.occupied, 0)
        self.assertFalse(out.values.any())

    def test_point_on_optical_axis(self):
        out = rasterize_fv(PointCloud([[0.0, 0.0, 10.0]]), IDENTITY, K, 48, 96)
        self.assertEqual(out.occupied, 1)
        self.assertEqual(out.values[24, 48], 10.0)

    def test_z_buffer_keeps_nearest(self):
        cloud = PointCloud([[0.0, 0.0, 9.0], [0.0, 0.0, 5.0]])
        for order in ([0, 1], [1, 0]):
            out = rasterize_fv(PointCloud(cloud.points[order]), IDENTITY, K, 48, 96)
            self.assertEqual(out.values[24, 48], 5.0)

    def test_two_point_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            pts = np.column_stack([rng.uniform(-0.2, 0.2, 2), rng.uniform(-0.2, 0.2, 2), rng.uniform(1, 30, 2)])
            out = rasterize_fv(PointCloud(pts), IDENTITY, K, 48, 96)
            pix = [(int(np.rint(K.fy * p[1] / p[2] + K.cy)), int(np.rint(K.fx * p[0] / p[2] + K.cx))) for p in pts]
            if pix[0] == pix[1]:
                self.assertEqual(out.occupied, 1)
                self.assertEqual(out.values[pix[0]], np.float32(pts[:, 2].min()))
            else:
                self.assertEqual(out.occupied, 2)

    def test_behind_camera_and_out_of_frame_are_dropped(self):
        cloud = PointCloud([[0.0, 0.0, -2.0], [100.0, 0.0, 1.0], [0.0, 0.0, 3.0]])
        out = rasterize_fv(cloud, IDENTITY, K, 48, 96)
        self.assertEqual(out.occupied, 1)
        self.assertEqual(out.dropped, 2)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        pts = np.column_stack([rng.uniform(-5, 5, 300), rng.uniform(-2, 2, 300), rng.uniform(1, 40, 300)])
        t = RigidTransform.from_euler([1.0, -2.0, 0.5], [0.1, -0.3, 0.2], degrees=True)
        a = rasterize_fv(PointCloud(pts), t, K, 48, 96)
        b = rasterize_fv(PointCloud(pts[rng.permutation(300)]), t, K, 48, 96)
        self.assertEqual(a.values.tobytes(), b.values.tobytes())
        self.assertLessEqual(a.occupied, 300)


class RasterizeBevTests(SimpleTestCase):

    def test_plane_cloud_shares_cam_height(self):
        rng = np.random.default_rng(2)
        pts = np.column_stack([rng.uniform(-20, 20, 200), np.zeros(200), rng.uniform(0, 45, 200)])
        out = rasterize_bev(PointCloud(pts), IDENTITY, KB, 1.5, 96, 96)
        np.testing.assert_array_equal(out.values[out.mask], np.float32(1.5))

    def test_pillar_keeps_max_height(self):
        heights = np.linspace(-1.5, 1.2, 25)
        pts = np.column_stack([np.full(25, 3.0), heights, np.full(25, 12.0)])
        out = rasterize_bev(PointCloud(pts), IDENTITY, KB, 1.5, 96, 96)
        self.assertEqual(out.occupied, 1)
        self.assertAlmostEqual(float(out.values[24, 54]), 1.2 + 1.5, places=5)

    def test_point_outside_map_is_counted(self):
        out = rasterize_bev(PointCloud([[100.0, 0.0, 10.0], [0.0, 0.0, 10.0]]), IDENTITY, KB, 1.5, 96, 96)
        self.assertEqual(out.occupied, 1)
        self.assertEqual(out.dropped, 1)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        pts = np.column_stack([rng.uniform(-20, 20, 400), rng.uniform(-1.5, 2, 400), rng.uniform(0, 45, 400)])
        a = rasterize_bev(PointCloud(pts), IDENTITY, KB, 1.5, 96, 96)
        b = rasterize_bev(PointCloud(pts[::-1]), IDENTITY, KB, 1.5, 96, 96)
        self.assertEqual(a.values.tobytes(), b.values.tobytes())


class PseudoBevTests(SimpleTestCase):

    def test_fronto_parallel_wall_fills_one_row(self):
        depth = InfoMap(np.full((48, 96), 10.0), np.ones((48, 96), bool), 'FV', 'image', K)
        out = depth_to_pseudo_bev(depth, K, KB, 1.5, 96, 96)
        rows = np.unique(np.nonzero(out.mask)[0])
        np.testing.assert_array_equal(rows, [20])

    def test_empty_depth_gives_empty_bev(self):
        out = depth_to_pseudo_bev(InfoMap.empty(48, 96, 'FV', 'image', K), K, KB, 1.5, 96, 96)
        self.assertEqual(out.occupied, 0)
        self.assertEqual(out.source, 'image')

    def test_single_pixel(self):
        values = np.zeros((48, 96))
        mask = np.zeros((48, 96), bool)
        values[10, 60], mask[10, 60] = 8.0, True
        out = depth_to_pseudo_bev(InfoMap(values, mask, 'FV', 'image', K), K, KB, 1.5, 96, 96)
        p = unproject_depth(60, 10, 8.0, K)
        self.assertEqual(out.occupied, 1)
        self.assertAlmostEqual(float(out.values[out.mask][0]), p[1] + 1.5, places=5)

    def test_rejects_bev_input(self):
        with self.assertRaises(ValueError):
            depth_to_pseudo_bev(InfoMap.empty(96, 96, 'BEV', 'image'), K, KB, 1.5, 96, 96)


class ResidualMapTests(SimpleTestCase):

    def setUp(self):
        radar = np.array([[10.25, 0.0], [7.0, 30.0]])
        image = np.array([[10.0, 12.0], [0.0, 20.0]])
        self.radar = InfoMap(radar, radar > 0, 'FV', 'radar')
        self.image = InfoMap(image, image > 0, 'FV', 'image')

    def test_difference_on_shared_cells_only(self):
        res = residual_map(self.radar, self.image)
        np.testing.assert_array_equal(res.mask, [[True, False], [False, True]])
        np.testing.assert_allclose(res.values, [[0.25, 0.0], [0.0, 10.0]])
        self.assertEqual((res.view, res.source), ('FV', 'radar'))

    def test_radar_input_stacks_map_and_residual(self):
        planes = radar_input(self.radar, self.image, scale=10.0)
        self.assertEqual((planes.shape, planes.dtype), ((2, 2, 2), np.float32))
        np.testing.assert_allclose(planes[0], self.radar.values / 10.0, rtol=1e-6)
        np.testing.assert_allclose(planes[1], [[0.025, 0.0], [0.0, 1.0]], rtol=1e-6)

    def test_views_must_agree(self):
        bev = InfoMap(np.zeros((2, 2)), np.zeros((2, 2), bool), 'BEV', 'image')
        with self.assertRaises(ValueError):
            residual_map(self.radar, bev)
        with self.assertRaises(ValueError):
            residual_map(self.radar, InfoMap.empty(3, 2, 'FV', 'image'))


class InfoMapTests(SimpleTestCase):

    def test_unoccupied_cells_must_be_zero(self):
        with self.assertRaises(ValueError):
            InfoMap(np.ones((2, 2)), np.zeros((2, 2), bool), 'FV', 'radar')

    def test_grayscale_is_bright_when_near(self):
        values = np.array([[2.0, 40.0], [0.0, 0.0]])
        mask = values > 0
        gray = depth_to_grayscale(InfoMap(values, mask, 'FV', 'image'), 80.0)
        self.assertGreater(gray.values[0, 0], gray.values[0, 1])
        self.assertEqual(gray.values[1, 0], 0.0)

    def test_default_rig_is_stride_aligned(self):
        rig = default_rig()
        for dim in rig.fv_shape + rig.bev_shape:
            self.assertEqual(dim % 8, 0)

    def test_scaled_rig_keeps_default_at_default_dims(self):
        self.assertEqual(scaled_rig().as_dict(), default_rig().as_dict())
        small = scaled_rig((16, 32), (32, 32))
        self.assertEqual(small.k.cx / small.k.fx, default_rig().k.cx / default_rig().k.fx)
        self.assertEqual(small.bev_shape[0] / small.k_bev.sz, 24.0)
        self.assertEqual(default_rig().bev_extent, (0.0, 23.75))

    def test_export_round_trip(self):
        rng = np.random.default_rng(4)
        values = np.where(rng.random((48, 96)) < 0.1, rng.uniform(1, 50, (48, 96)), 0.0)
        info = InfoMap(values, values > 0, 'FV', 'radar')
        with tempfile.TemporaryDirectory() as tmp:
            pgm, blob = export_map(info, Path(tmp) / 'radar_fv')
            self.assertEqual(read_pgm(pgm).shape, (48, 96))
            self.assertEqual(read_float_blob(blob, (48, 96)).tobytes(), info.values.tobytes())
