"""
Sensor rendering for a synthetic scene.

Radar: sparse returns sampled on obstacle faces near the radar plane, recorded
as if they lay on that plane (elevation collapse), with range noise, dropout and
ghost returns in free space. LiDAR: dense, exact obstacle-surface samples. The
depth map is ray-cast from the camera against the ground and the obstacles.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from geometry.cameras import PointCloud
from geometry.transforms import RigidTransform
from raster.maps import InfoMap, SensorRig

from .scenes import Box, Scene, generate_scene

logger = logging.getLogger(__name__)

SURFACE, GHOST = 0, 1
GHOST_NEAR = 6.0  # meters


@dataclass(frozen=True)
class RadarNoiseModel:
    elevation_collapse: bool = True
    depth_sigma: float = 0.15       # meters, range noise
    dropout_prob: float = 0.2
    max_points: int = 64
    ghost_count: int = 4            # free-space returns per sample
    elevation_band: float = 1.0     # reflectors within ± this of the radar plane
    ghost_clearance: float = 2.0    # meters from every obstacle footprint

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1], got {self.dropout_prob}")
        if self.depth_sigma < 0:
            raise ValueError(f"depth_sigma must be non-negative, got {self.depth_sigma}")
        if self.max_points < 0 or self.ghost_count < 0:
            raise ValueError("point counts must be non-negative")


NOISE_PROFILES = {
    'clean': RadarNoiseModel(depth_sigma=0.0, dropout_prob=0.0, ghost_count=0),
    'default': RadarNoiseModel(),
    'harsh': RadarNoiseModel(depth_sigma=0.4, dropout_prob=0.4, ghost_count=10),
}


def noise_profile(name: str) -> RadarNoiseModel:
    try:
        return NOISE_PROFILES[name]
    except KeyError:
        raise ValueError(f"Unknown noise profile: {name} (expected one of {sorted(NOISE_PROFILES)})")


@dataclass(frozen=True, eq=False)
class Sample:
    sample_id: str
    index: int
    t_gt: RigidTransform   # radar → camera
    radar: PointCloud      # radar frame, labels SURFACE / GHOST
    lidar: PointCloud      # camera frame, obstacle surfaces only
    depth: InfoMap         # FV, image

    @property
    def split(self) -> str:
        return split_of(self.index)

    def lidar_in_radar_frame(self) -> PointCloud:
        return PointCloud(self.t_gt.inverse().apply(self.lidar.points), 'lidar')


def split_of(index: int) -> str:
    r = index % 10
    return 'train' if r < 8 else ('val' if r == 8 else 'test')


def sensor_precision(points) -> np.ndarray:
    """Round to float32, the precision blobs are stored with."""
    return np.asarray(points, dtype=np.float32).astype(np.float64)


# ─────────────────────────────────────────────────────────────────────────────
# Ray casting
# ─────────────────────────────────────────────────────────────────────────────

def ray_box_entry(origins, dirs, box: Box) -> np.ndarray:
    """Slab test: ray parameter of the first hit (inf when missed)."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = 1.0 / dirs
        t1 = (box.lo - origins) * inv
        t2 = (box.hi - origins) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    t_near = np.max(np.minimum(t1, t2), axis=1)
    t_far = np.min(np.maximum(t1, t2), axis=1)
    hit = (t_far >= t_near) & (t_far > 0)
    return np.where(hit, np.maximum(t_near, 0.0), np.inf)


def visible_from(origin, points, scene: Scene, eps: float = 1e-6) -> np.ndarray:
    """True where no other obstacle cuts the segment origin → point."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(origin, dtype=np.float64), points.shape)
    dirs = points - origins
    visible = np.ones(len(points), dtype=bool)
    for box in scene.boxes:
        t = ray_box_entry(origins, dirs, box)
        visible &= ~(t < 1.0 - eps)
    return visible


def render_depth(scene: Scene, rig: SensorRig) -> InfoMap:
    """Exact depth (camera Z) per FV pixel; sky and anything past max_depth stay empty."""
    h, w = rig.fv_shape
    k = rig.k
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    dirs = np.stack([(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    origins = np.zeros_like(dirs)
    depth = np.full(len(dirs), np.inf)
    down = dirs[:, 1] < 0
    depth[down] = -scene.cam_height / dirs[down, 1]
    for box in scene.boxes:
        depth = np.minimum(depth, ray_box_entry(origins, dirs, box))
    depth = depth.reshape(h, w)
    mask = np.isfinite(depth) & (depth <= rig.max_depth) & (depth > 0)
    values = np.where(mask, depth, 0.0).astype(np.float32)
    return InfoMap(values, mask, 'FV', 'image', k)


# ─────────────────────────────────────────────────────────────────────────────
# Surface sampling
# ─────────────────────────────────────────────────────────────────────────────

def _face_samples(box: Box, viewer, n: int, rng: np.random.Generator, y_range=None) -> np.ndarray:
    """Uniform samples on the faces of `box` that face `viewer`, area-weighted."""
    faces = []
    viewer = np.asarray(viewer, dtype=np.float64)
    for axis in (0, 2):
        if viewer[axis] < box.lo[axis]:
            faces.append((axis, box.lo[axis]))
        elif viewer[axis] > box.hi[axis]:
            faces.append((axis, box.hi[axis]))
    if viewer[1] > box.hi[1]:
        faces.append((1, box.hi[1]))
    if not faces or n <= 0:
        return np.zeros((0, 3))
    y_lo, y_hi = box.lo[1], box.hi[1]
    if y_range is not None:
        y_lo, y_hi = max(y_lo, y_range[0]), min(y_hi, y_range[1])
        faces = [f for f in faces if f[0] != 1 or y_lo <= f[1] <= y_hi]
        if y_lo >= y_hi or not faces:
            return np.zeros((0, 3))
    lo = np.array([box.lo[0], y_lo, box.lo[2]])
    hi = np.array([box.hi[0], y_hi, box.hi[2]])
    size = hi - lo
    areas = np.array([np.prod(np.delete(size, axis)) for axis, _ in faces])
    if areas.sum() <= 0:
        return np.zeros((0, 3))
    choice = rng.choice(len(faces), size=n, p=areas / areas.sum())
    pts = rng.uniform(lo, hi, size=(n, 3))
    for f, (axis, value) in enumerate(faces):
        pts[choice == f, axis] = value
    return pts


def render_lidar(scene: Scene, rig: SensorRig, density: float, rng: np.random.Generator) -> PointCloud:
    """About `density` samples per square meter of camera-facing obstacle surface."""
    clouds = []
    for box in scene.boxes:
        sx, sy, sz = box.size
        n = int(round(density * (sx * sy + sz * sy + sx * sz)))
        pts = _face_samples(box, np.zeros(3), n, rng)
        clouds.append(pts[visible_from(np.zeros(3), pts, scene)])
    pts = np.concatenate(clouds) if clouds else np.zeros((0, 3))
    return PointCloud(sensor_precision(pts), 'lidar')


def record_radar(points_radar, noise: RadarNoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Range noise along the original azimuth; with collapse, the return lands on Y = 0."""
    q = np.asarray(points_radar, dtype=np.float64).reshape(-1, 3)
    rng_range = np.linalg.norm(q, axis=1)
    noisy = rng_range + (rng.normal(0.0, noise.depth_sigma, len(q)) if noise.depth_sigma > 0 else 0.0)
    noisy = np.maximum(noisy, 0.0)
    if noise.elevation_collapse:
        theta = np.arctan2(q[:, 0], q[:, 2])
        return np.column_stack([noisy * np.sin(theta), np.zeros(len(q)), noisy * np.cos(theta)])
    scale = np.divide(noisy, rng_range, out=np.ones_like(noisy), where=rng_range > 0)
    return q * scale[:, None]


def _ghosts(scene: Scene, rig: SensorRig, noise: RadarNoiseModel, rng: np.random.Generator) -> np.ndarray:
    """Free-space returns on the radar plane, clear of every obstacle."""
    if noise.ghost_count == 0:
        return np.zeros((0, 3))
    to_cam = scene.t_gt
    half_fov = rig.k.cx / rig.k.fx * 0.8
    out = []
    for _ in range(noise.ghost_count * 50):
        if len(out) == noise.ghost_count:
            break
        z = rng.uniform(GHOST_NEAR, rig.bev_extent[1] - 1.0)
        x = rng.uniform(-half_fov * z, half_fov * z)
        # place on the radar plane, then test clearance in the camera frame
        q = np.array([x, 0.0, z])
        p = to_cam.apply(q)[0]
        if scene.obstacle_clearance(p[0], p[2]) >= noise.ghost_clearance:
            out.append(q)
    return np.array(out).reshape(-1, 3)


def render_radar(scene: Scene, rig: SensorRig, noise: RadarNoiseModel, rng: np.random.Generator) -> PointCloud:
    to_radar = scene.t_gt.inverse()
    origin = scene.t_gt.translation  # radar origin in the camera frame
    plane_y = origin[1]
    band = (plane_y - noise.elevation_band, plane_y + noise.elevation_band)
    per_box = max(noise.max_points // max(len(scene.boxes), 1), 1)

    surfaces = []
    for box in scene.boxes:
        pts = _face_samples(box, origin, per_box, rng, y_range=band)
        surfaces.append(pts[visible_from(origin, pts, scene)])
    surface = np.concatenate(surfaces) if surfaces else np.zeros((0, 3))
    if noise.dropout_prob > 0 and len(surface):
        surface = surface[rng.random(len(surface)) >= noise.dropout_prob]

    recorded = record_radar(to_radar.apply(surface), noise, rng) if len(surface) else np.zeros((0, 3))
    ghosts = _ghosts(scene, rig, noise, rng)
    points = np.concatenate([recorded, ghosts])
    labels = np.concatenate([np.full(len(recorded), SURFACE), np.full(len(ghosts), GHOST)])
    if len(points) > noise.max_points:
        keep = np.sort(rng.choice(len(points), noise.max_points, replace=False))
        points, labels = points[keep], labels[keep]
    return PointCloud(sensor_precision(points), 'radar', labels=labels)


def render_sample(scene: Scene, noise: RadarNoiseModel, lidar_density: float, rig: SensorRig,
                  rng: np.random.Generator, index: int = 0, sample_id: str | None = None) -> Sample:
    """Radar cloud (radar frame), LiDAR cloud (camera frame) and exact depth map of one scene."""
    radar = render_radar(scene, rig, noise, rng)
    lidar = render_lidar(scene, rig, lidar_density, rng)
    depth = render_depth(scene, rig)
    sample_id = sample_id or f"{index:06d}"
    logger.debug("sample %s: %d radar, %d lidar, %d depth pixels", sample_id, len(radar), len(lidar), depth.occupied)
    return Sample(sample_id, index, scene.t_gt, radar, lidar, depth)


def generate_samples(count: int, seed: int, noise: RadarNoiseModel, rig: SensorRig,
                     lidar_density: float = 40.0, scene_config=None) -> list[Sample]:
    """Each sample draws from its own stream seeded by (seed, index)."""
    samples = []
    for index in range(count):
        scene = generate_scene((seed, index), rig, scene_config)
        rng = np.random.default_rng((seed, index, 1))
        samples.append(render_sample(scene, noise, lidar_density, rig, rng, index))
    return samples
