"""
Point clouds and the two projections feeding the information maps.

Camera frame convention: X right, Y up, Z forward. Image rows grow with Y, so
the ground plane sits at Y = -cam_height and `Y + cam_height` is height above
ground.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .transforms import RigidTransform

DEPTH_EPS = 1e-3  # meters; closer points count as behind the camera

SensorTag = Literal['radar', 'lidar', 'pseudo']
SENSOR_TAGS = ('radar', 'lidar', 'pseudo')


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_dict(self) -> dict:
        return {'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy}


@dataclass(frozen=True)
class BevIntrinsics:
    """Orthographic top-down projection: u_b = sx·X + cx, v_b = sz·Z + cz."""

    sx: float
    sz: float
    cx: float
    cz: float

    def __post_init__(self):
        if not (self.sx > 0 and self.sz > 0):
            raise ValueError(f"BEV scales must be positive, got sx={self.sx} sz={self.sz}")

    def as_dict(self) -> dict:
        return {'sx': self.sx, 'sz': self.sz, 'cx': self.cx, 'cz': self.cz}


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    sensor: SensorTag = 'radar'
    reliable: np.ndarray | None = None
    # per-point integer metadata (synthetic radar: 0 surface return, 1 ghost)
    labels: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.sensor not in SENSOR_TAGS:
            raise ValueError(f"Unknown sensor tag: {self.sensor}")
        object.__setattr__(self, 'points', pts)
        if self.reliable is not None:
            reliable = np.asarray(self.reliable, dtype=bool).reshape(-1)
            if reliable.shape[0] != pts.shape[0]:
                raise ValueError("reliable flags must match point count")
            object.__setattr__(self, 'reliable', reliable)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != pts.shape[0]:
                raise ValueError("labels must match point count")
            object.__setattr__(self, 'labels', labels)

    def __len__(self):
        return self.points.shape[0]

    def with_reliability(self, reliable) -> PointCloud:
        return PointCloud(self.points, self.sensor, reliable, self.labels)

    def subset(self, mask) -> PointCloud:
        mask = np.asarray(mask, dtype=bool)
        return PointCloud(
            self.points[mask],
            self.sensor,
            None if self.reliable is None else self.reliable[mask],
            None if self.labels is None else self.labels[mask],
        )


def transform_points(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    return PointCloud(t.apply(cloud.points), cloud.sensor, cloud.reliable, cloud.labels)


# ─────────────────────────────────────────────────────────────────────────────
# Frontal view
# ─────────────────────────────────────────────────────────────────────────────

def project_fv(point, k: CameraIntrinsics):
    """
    Pinhole projection of a camera-frame point.
    Returns (u_f, v_f, depth) or None when the point is behind the camera.
    """
    x, y, z = (float(c) for c in np.asarray(point, dtype=np.float64).reshape(3))
    if z <= DEPTH_EPS:
        return None
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy, z


def project_fv_many(points, k: CameraIntrinsics):
    """Vectorised `project_fv`: returns (u, v, depth, valid)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    valid = z > DEPTH_EPS
    safe_z = np.where(valid, z, 1.0)
    u = k.fx * pts[:, 0] / safe_z + k.cx
    v = k.fy * pts[:, 1] / safe_z + k.cy
    return u, v, z, valid


def unproject_depth(u, v, depth, k: CameraIntrinsics) -> np.ndarray:
    """P = K⁻¹ · depth · (u, v, 1)ᵀ."""
    if not depth > 0:
        raise ProjectionError(f"depth must be positive, got {depth}")
    return np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, float(depth)])


def unproject_depth_many(u, v, depth, k: CameraIntrinsics) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if np.any(d <= 0):
        raise ProjectionError("depth must be positive for every pixel")
    return np.stack([(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d], axis=-1)


# ─────────────────────────────────────────────────────────────────────────────
# Bird's-eye view
# ─────────────────────────────────────────────────────────────────────────────

def project_bev(point, k: BevIntrinsics, cam_height: float):
    """Returns (u_b, v_b, value) with value = Y + cam_height."""
    x, y, z = (float(c) for c in np.asarray(point, dtype=np.float64).reshape(3))
    return k.sx * x + k.cx, k.sz * z + k.cz, y + cam_height


def project_bev_many(points, k: BevIntrinsics, cam_height: float):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return k.sx * pts[:, 0] + k.cx, k.sz * pts[:, 2] + k.cz, pts[:, 1] + cam_height
