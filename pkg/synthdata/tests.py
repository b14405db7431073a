import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from fusion.pipeline import prepare_sample
from raster.maps import default_rig, rasterize_fv
from supervision.matches import gt_matches

from .scenes import Box, SceneConfig, generate_scene, in_frustum
from .sensors import (
    GHOST, NOISE_PROFILES, SURFACE, RadarNoiseModel, generate_samples, noise_profile, ray_box_entry,
    record_radar, render_sample, split_of,
)
from .storage import (
    HEADER, ChecksumError, DatasetError, FormatVersionError, MissingBlobError, TruncatedBlobError,
    decode_blob, encode_blob, read_dataset, read_manifest, read_sample_dir, write_dataset,
)

RIG = default_rig()


def box_distance(points, box: Box) -> np.ndarray:
    """Euclidean distance from each point to the closed box."""
    d = np.maximum(np.maximum(box.lo - points, points - box.hi), 0.0)
    return np.linalg.norm(d, axis=1)


class SceneTests(SimpleTestCase):

    def test_same_seed_same_scene(self):
        a, b = generate_scene((7, 1), RIG), generate_scene((7, 1), RIG)
        self.assertEqual(len(a.boxes), len(b.boxes))
        for x, y in zip(a.boxes, b.boxes):
            self.assertEqual(x.lo.tobytes(), y.lo.tobytes())
            self.assertEqual(x.hi.tobytes(), y.hi.tobytes())
        self.assertEqual(a.t_gt.as_matrix().tobytes(), b.t_gt.as_matrix().tobytes())

    def test_seed_changes_layout(self):
        a, b = generate_scene((7, 1), RIG), generate_scene((7, 2), RIG)
        self.assertFalse(np.array_equal(a.boxes[0].lo, b.boxes[0].lo))

    def test_obstacles_in_frustum_and_plausible_extrinsic(self):
        config = SceneConfig()
        for index in range(20):
            scene = generate_scene((0, index), RIG, config)
            self.assertGreater(len(scene.boxes), 0)
            for box in scene.boxes:
                self.assertTrue(in_frustum(box, RIG, config.fov_margin))
                self.assertAlmostEqual(box.lo[1], -RIG.cam_height)
            self.assertLess(np.linalg.norm(scene.t_gt.translation), 3.0)
            self.assertLess(np.degrees(np.linalg.norm(scene.t_gt.rotvec)), 2.0 * np.sqrt(3) + 1e-9)

    def test_ray_box_entry(self):
        box = Box(np.array([-1.0, -1.0, 5.0]), np.array([1.0, 1.0, 7.0]))
        t = ray_box_entry([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]], [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], box)
        self.assertEqual(t[0], 5.0)
        self.assertTrue(np.isinf(t[1]))


class RadarModelTests(SimpleTestCase):

    def test_single_reflector_elevation_collapse(self):
        noise = RadarNoiseModel(depth_sigma=0.0, dropout_prob=0.0, ghost_count=0)
        out = record_radar([[3.0, 2.0, 4.0]], noise, np.random.default_rng(0))[0]
        r = np.sqrt(29.0)
        np.testing.assert_allclose(out, [0.6 * r, 0.0, 0.8 * r], atol=1e-12)

    def test_range_noise_keeps_azimuth(self):
        noise = RadarNoiseModel(depth_sigma=0.5, dropout_prob=0.0, ghost_count=0, elevation_collapse=False)
        q = np.array([[3.0, 0.0, 4.0]])
        out = record_radar(q, noise, np.random.default_rng(1))[0]
        np.testing.assert_allclose(np.cross(out, q[0]), np.zeros(3), atol=1e-12)

    def test_model_validation(self):
        with self.assertRaises(ValueError):
            RadarNoiseModel(dropout_prob=1.5)
        with self.assertRaises(ValueError):
            RadarNoiseModel(depth_sigma=-0.1)
        with self.assertRaises(ValueError):
            noise_profile('stormy')
        self.assertEqual(set(NOISE_PROFILES), {'clean', 'default', 'harsh'})


class RenderTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scene = generate_scene((11, 0), RIG)

    def test_elevation_collapse_puts_radar_on_its_plane(self):
        sample = render_sample(self.scene, noise_profile('default'), 20.0, RIG, np.random.default_rng(0))
        np.testing.assert_array_equal(sample.radar.points[:, 1], np.zeros(len(sample.radar)))

    def test_noiseless_radar_lies_on_obstacle_surfaces(self):
        noise = RadarNoiseModel(elevation_collapse=False, depth_sigma=0.0, dropout_prob=0.0, ghost_count=0)
        sample = render_sample(self.scene, noise, 20.0, RIG, np.random.default_rng(1))
        self.assertGreater(len(sample.radar), 0)
        in_camera = self.scene.t_gt.apply(sample.radar.points)
        nearest = np.min([box_distance(in_camera, box) for box in self.scene.boxes], axis=0)
        self.assertLess(float(nearest.max()), 1e-4)
        self.assertTrue(np.all(sample.radar.labels == SURFACE))

    def test_counts_and_labels(self):
        noise = noise_profile('default')
        sample = render_sample(self.scene, noise, 20.0, RIG, np.random.default_rng(2))
        self.assertLessEqual(len(sample.radar), noise.max_points)
        self.assertGreater(len(sample.lidar), 5 * len(sample.radar))
        self.assertLessEqual(int(np.sum(sample.radar.labels == GHOST)), noise.ghost_count)
        self.assertTrue(set(np.unique(sample.radar.labels)) <= {SURFACE, GHOST})

    def test_sparse_radar_maps(self):
        for sample in generate_samples(5, 4, noise_profile('default'), RIG, lidar_density=10.0):
            fv = rasterize_fv(sample.radar, sample.t_gt, RIG.k, *RIG.fv_shape)
            self.assertLessEqual(fv.occupied, len(sample.radar))
            self.assertLess(10 * fv.occupied, sample.depth.occupied)

    def test_depth_map_is_exact_on_the_ground(self):
        sample = render_sample(self.scene, noise_profile('clean'), 5.0, RIG, np.random.default_rng(3))
        h, _ = RIG.fv_shape
        # bottom row hits the ground unless an obstacle is in the way
        v = 0
        z = RIG.cam_height * RIG.k.fy / (RIG.k.cy - v)
        row = sample.depth.values[v]
        self.assertTrue(np.any(np.isclose(row, z, rtol=1e-5)))
        self.assertTrue(np.all(row[row > 0] <= z + 1e-3))
        self.assertEqual(sample.depth.values.shape, (h, RIG.fv_shape[1]))

    def test_identical_extrinsics_give_diagonal_matches(self):
        for sample in generate_samples(100, 5, noise_profile('clean'), RIG, lidar_density=2.0):
            for view, k, grid in (('FV', RIG.k, (6, 12)), ('BEV', RIG.k_bev, (12, 12))):
                m = gt_matches(sample.radar, sample.t_gt, sample.t_gt, k, grid, view,
                               reliable_only=False, cam_height=RIG.cam_height)
                self.assertTrue(all(i == j for i, j in m.pairs()), sample.sample_id)

    def test_ghost_returns_are_rejected(self):
        ghosts, rejected = 0, 0
        for sample in generate_samples(30, 6, noise_profile('default'), RIG, lidar_density=20.0):
            flags = prepare_sample(sample, RIG).cloud.reliable
            is_ghost = sample.radar.labels == GHOST
            ghosts += int(is_ghost.sum())
            rejected += int(np.sum(is_ghost & ~flags))
        self.assertGreater(ghosts, 0)
        self.assertGreaterEqual(rejected / ghosts, 0.95)

    def test_ghost_returns_fall_inside_the_bev_map(self):
        near, far = RIG.bev_extent
        for sample in generate_samples(10, 8, noise_profile('harsh'), RIG, lidar_density=2.0):
            ghosts = sample.radar.points[sample.radar.labels == GHOST]
            if len(ghosts):
                z = sample.t_gt.apply(ghosts)[:, 2]
                self.assertTrue(np.all((z > near) & (z < far)), sample.sample_id)

    def test_splits(self):
        self.assertEqual([split_of(i) for i in (0, 7, 8, 9, 10, 18)],
                         ['train', 'train', 'val', 'test', 'train', 'val'])

    def test_generation_is_reproducible(self):
        a = generate_samples(2, 9, noise_profile('default'), RIG, lidar_density=5.0)
        b = generate_samples(2, 9, noise_profile('default'), RIG, lidar_density=5.0)
        for x, y in zip(a, b):
            self.assertEqual(x.radar.points.tobytes(), y.radar.points.tobytes())
            self.assertEqual(x.depth.values.tobytes(), y.depth.values.tobytes())


class StorageTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.samples = generate_samples(3, 1, noise_profile('default'), RIG, lidar_density=5.0)

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name) / 'data'

    def tearDown(self):
        self.tmp.cleanup()

    def test_blob_header(self):
        raw = encode_blob(np.zeros((4, 3), np.float32))
        self.assertEqual(HEADER.size, 16)
        self.assertEqual(raw[:4], b'RCB1')
        self.assertEqual(len(raw), 16 + 48)
        np.testing.assert_array_equal(decode_blob(raw), np.zeros((4, 3)))
        with self.assertRaises(TruncatedBlobError):
            decode_blob(raw[:40])
        with self.assertRaises(DatasetError):
            decode_blob(b'XXXX' + raw[4:])

    def test_round_trip_is_bit_exact(self):
        write_dataset(self.samples, self.root, RIG, {'seed': 1})
        data = read_dataset(self.root)
        self.assertEqual(data.rig.as_dict(), RIG.as_dict())
        self.assertEqual(data.metadata, {'seed': 1})
        for a, b in zip(self.samples, data.samples):
            self.assertEqual(a.sample_id, b.sample_id)
            self.assertEqual(a.radar.points.tobytes(), b.radar.points.tobytes())
            self.assertEqual(a.lidar.points.tobytes(), b.lidar.points.tobytes())
            self.assertEqual(a.depth.values.tobytes(), b.depth.values.tobytes())
            np.testing.assert_array_equal(a.radar.labels, b.radar.labels)
            np.testing.assert_array_equal(a.t_gt.as_matrix(), b.t_gt.as_matrix())

    def test_identical_inputs_give_identical_bytes(self):
        other = Path(self.tmp.name) / 'again'
        write_dataset(self.samples, self.root, RIG)
        write_dataset(self.samples, other, RIG)
        for path in sorted(self.root.rglob('*')):
            if path.is_file():
                self.assertEqual(path.read_bytes(), (other / path.relative_to(self.root)).read_bytes())

    def test_empty_dataset(self):
        write_dataset([], self.root, RIG)
        self.assertEqual(read_dataset(self.root).samples, [])

    def test_corrupted_blob(self):
        write_dataset(self.samples, self.root, RIG)
        blob = self.root / 'samples' / self.samples[0].sample_id / 'lidar.bin'
        raw = bytearray(blob.read_bytes())
        raw[-1] ^= 0xFF
        blob.write_bytes(bytes(raw))
        with self.assertRaises(ChecksumError):
            read_dataset(self.root)

    def test_truncated_blob(self):
        write_dataset(self.samples, self.root, RIG)
        blob = self.root / 'samples' / self.samples[0].sample_id / 'depth.bin'
        blob.write_bytes(blob.read_bytes()[:100])
        with self.assertRaises(TruncatedBlobError):
            read_dataset(self.root)

    def test_missing_blob_names_the_file(self):
        write_dataset(self.samples, self.root, RIG)
        (self.root / 'samples' / self.samples[1].sample_id / 'radar.bin').unlink()
        with self.assertRaisesMessage(MissingBlobError, f"samples/{self.samples[1].sample_id}/radar.bin"):
            read_dataset(self.root)

    def test_version_mismatch(self):
        path = write_dataset(self.samples, self.root, RIG)
        manifest = json.loads(path.read_text())
        manifest['format_version'] = 99
        path.write_text(json.dumps(manifest))
        with self.assertRaises(FormatVersionError):
            read_manifest(self.root)

    def test_manifest_summary_and_sample_dir(self):
        write_dataset(self.samples, self.root, RIG)
        entry = read_manifest(self.root)['samples'][0]
        self.assertEqual(entry['radar_points'], len(self.samples[0].radar))
        self.assertEqual(entry['split'], 'train')
        self.assertEqual(len(entry['t_gt']), 16)
        sample, rig = read_sample_dir(self.root / 'samples' / self.samples[0].sample_id)
        self.assertEqual(sample.lidar.points.tobytes(), self.samples[0].lidar.points.tobytes())
        self.assertEqual(rig.fv_shape, RIG.fv_shape)
        subset = read_dataset(self.root, ids=[self.samples[2].sample_id])
        self.assertEqual([s.sample_id for s in subset.samples], [self.samples[2].sample_id])
        self.assertEqual(subset.by_id(self.samples[2].sample_id).index, 2)
        with self.assertRaises(DatasetError):
            subset.by_id('nope')
