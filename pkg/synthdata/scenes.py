"""
Procedural driving scenes: a ground plane, axis-aligned box obstacles in front
of the camera and a radar mounted below it.

All coordinates are in the camera frame (X right, Y up, Z forward) with the
ground at Y = -cam_height.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from geometry.transforms import RigidTransform
from raster.maps import SensorRig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray  # min corner (3,)
    hi: np.ndarray  # max corner (3,)

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    def footprint_distance(self, x, z) -> np.ndarray:
        """Horizontal distance from (x, z) to the box footprint (0 inside)."""
        dx = np.maximum(np.maximum(self.lo[0] - x, x - self.hi[0]), 0.0)
        dz = np.maximum(np.maximum(self.lo[2] - z, z - self.hi[2]), 0.0)
        return np.hypot(dx, dz)


@dataclass(frozen=True)
class SceneConfig:
    obstacles: tuple[int, int] = (4, 10)
    front_z: tuple[float, float] = (5.0, 19.0)
    width: tuple[float, float] = (0.6, 2.5)
    height: tuple[float, float] = (0.8, 2.8)
    depth: tuple[float, float] = (0.6, 4.0)
    fov_margin: float = 0.85
    gap: float = 0.5
    # extrinsic sampling: Euler degrees, translation bounds (camera frame)
    rot_deg: float = 2.0
    trans_lo: tuple[float, float, float] = (-0.5, -1.1, -0.2)
    trans_hi: tuple[float, float, float] = (0.5, -0.7, 0.5)


@dataclass(frozen=True, eq=False)
class Scene:
    boxes: list[Box]
    cam_height: float
    t_gt: RigidTransform  # radar → camera
    seed: tuple = field(default=())

    def obstacle_clearance(self, x, z) -> np.ndarray:
        """Horizontal distance to the nearest obstacle footprint."""
        x, z = np.asarray(x, dtype=np.float64), np.asarray(z, dtype=np.float64)
        out = np.full(np.broadcast(x, z).shape, np.inf)
        for box in self.boxes:
            out = np.minimum(out, box.footprint_distance(x, z))
        return out


def _overlaps(candidate: Box, boxes: list[Box], gap: float) -> bool:
    for b in boxes:
        if (candidate.lo[0] < b.hi[0] + gap and b.lo[0] < candidate.hi[0] + gap
                and candidate.lo[2] < b.hi[2] + gap and b.lo[2] < candidate.hi[2] + gap):
            return True
    return False


def in_frustum(box: Box, rig: SensorRig, margin: float = 1.0) -> bool:
    """Whole box visible in the FV map and inside the BEV map."""
    k, kb = rig.k, rig.k_bev
    h, w = rig.fv_shape
    hb, wb = rig.bev_shape
    z = box.lo[2]
    if z <= 0:
        return False
    corners_u = k.fx * np.array([box.lo[0], box.hi[0]]) / z + k.cx
    corners_v = k.fy * np.array([box.lo[1], box.hi[1]]) / z + k.cy
    inside_fv = (corners_u.min() >= (1 - margin) * w / 2 and corners_u.max() <= w - (1 - margin) * w / 2
                 and corners_v.min() >= 0 and corners_v.max() <= h - 1)
    ub = kb.sx * np.array([box.lo[0], box.hi[0]]) + kb.cx
    vb = kb.sz * np.array([box.lo[2], box.hi[2]]) + kb.cz
    inside_bev = ub.min() >= 0 and ub.max() <= wb - 1 and vb.min() >= 0 and vb.max() <= hb - 1
    return bool(inside_fv and inside_bev)


def sample_extrinsic(rng: np.random.Generator, config: SceneConfig) -> RigidTransform:
    euler = rng.uniform(-config.rot_deg, config.rot_deg, size=3)
    trans = rng.uniform(config.trans_lo, config.trans_hi)
    return RigidTransform.from_euler(euler, trans, degrees=True)


def generate_scene(seed, rig: SensorRig, config: SceneConfig | None = None) -> Scene:
    """Deterministic per seed (an int or a sequence such as (seed, index))."""
    config = config or SceneConfig()
    rng = np.random.default_rng(seed)
    target = int(rng.integers(config.obstacles[0], config.obstacles[1] + 1))
    half_fov = rig.k.cx / rig.k.fx * config.fov_margin
    ground = -rig.cam_height
    boxes: list[Box] = []
    for _ in range(target * 30):
        if len(boxes) == target:
            break
        size = np.array([rng.uniform(*config.width), rng.uniform(*config.height), rng.uniform(*config.depth)])
        z = rng.uniform(*config.front_z)
        x_limit = half_fov * z - size[0] / 2.0
        if x_limit <= 0:
            continue
        x = rng.uniform(-x_limit, x_limit)
        box = Box(np.array([x - size[0] / 2.0, ground, z]),
                  np.array([x + size[0] / 2.0, ground + size[1], z + size[2]]))
        if in_frustum(box, rig, config.fov_margin) and not _overlaps(box, boxes, config.gap):
            boxes.append(box)
    if len(boxes) < config.obstacles[0]:
        logger.warning("scene %s placed only %d of %d obstacles", seed, len(boxes), target)
    seed_key = tuple(np.atleast_1d(seed).tolist())
    return Scene(boxes, rig.cam_height, sample_extrinsic(rng, config), seed_key)
