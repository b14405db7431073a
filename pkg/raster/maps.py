"""
Dual-perspective information maps.

Radar and pseudo point clouds are splatted to the nearest integer pixel.
Collisions are resolved with order-independent reductions: the FV map keeps
the smallest depth, the BEV map keeps the largest height.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from geometry.cameras import (
    BevIntrinsics, CameraIntrinsics, PointCloud,
    project_bev_many, project_fv_many, unproject_depth_many,
)
from geometry.transforms import RigidTransform

logger = logging.getLogger(__name__)

View = Literal['FV', 'BEV']
Source = Literal['radar', 'image']


@dataclass(frozen=True, eq=False)
class InfoMap:
    values: np.ndarray  # (H, W) float32, meters
    mask: np.ndarray    # (H, W) bool occupancy
    view: View
    source: Source
    intrinsics: CameraIntrinsics | BevIntrinsics | None = None
    dropped: int = 0    # points that fell outside the map or behind the camera

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        mask = np.asarray(self.mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 2:
            raise ValueError(f"values {values.shape} and mask {mask.shape} must be matching 2-D grids")
        if np.any(values[~mask] != 0):
            raise ValueError("unoccupied cells must hold zero")
        object.__setattr__(self, 'values', values)
        object.__setattr__(self, 'mask', mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def occupied(self) -> int:
        return int(self.mask.sum())

    @property
    def occupancy(self) -> float:
        return self.occupied / self.mask.size

    @classmethod
    def empty(cls, h, w, view: View, source: Source, intrinsics=None) -> InfoMap:
        return cls(np.zeros((h, w), np.float32), np.zeros((h, w), bool), view, source, intrinsics)


@dataclass(frozen=True)
class SensorRig:
    """Intrinsics and map sizes shared by every sample of a dataset."""

    k: CameraIntrinsics
    k_bev: BevIntrinsics
    cam_height: float
    fv_shape: tuple[int, int]
    bev_shape: tuple[int, int]
    max_depth: float = 80.0

    def as_dict(self) -> dict:
        return {
            'k': self.k.as_dict(),
            'k_bev': self.k_bev.as_dict(),
            'cam_height': self.cam_height,
            'fv_shape': list(self.fv_shape),
            'bev_shape': list(self.bev_shape),
            'max_depth': self.max_depth,
        }

    @property
    def bev_extent(self) -> tuple[float, float]:
        """Nearest and farthest forward distance (meters) the BEV map covers."""
        kb = self.k_bev
        return -kb.cz / kb.sz, (self.bev_shape[0] - 1 - kb.cz) / kb.sz

    @classmethod
    def from_dict(cls, data: dict) -> SensorRig:
        return cls(
            k=CameraIntrinsics(**data['k']),
            k_bev=BevIntrinsics(**data['k_bev']),
            cam_height=float(data['cam_height']),
            fv_shape=tuple(int(x) for x in data['fv_shape']),
            bev_shape=tuple(int(x) for x in data['bev_shape']),
            max_depth=float(data.get('max_depth', 80.0)),
        )


def default_rig() -> SensorRig:
    """400×192 frames scaled by 1/4, width trimmed to a multiple of the stride 8."""
    return SensorRig(
        k=CameraIntrinsics(fx=80.0, fy=80.0, cx=48.0, cy=24.0),
        k_bev=BevIntrinsics(sx=4.0, sz=4.0, cx=48.0, cz=0.0),
        cam_height=1.5,
        fv_shape=(48, 96),
        bev_shape=(96, 96),
    )


def scaled_rig(fv_shape=(48, 96), bev_shape=(96, 96), cam_height: float = 1.5, max_depth: float = 80.0) -> SensorRig:
    """
    The default rig resized to other map dimensions. Horizontal field of view
    and BEV ground coverage stay those of the default rig.
    """
    h, w = fv_shape
    hb, wb = bev_shape
    f = 80.0 * w / 96.0
    s = 4.0 * wb / 96.0
    return SensorRig(
        k=CameraIntrinsics(fx=f, fy=f, cx=w / 2.0, cy=h / 2.0),
        k_bev=BevIntrinsics(sx=s, sz=s, cx=wb / 2.0, cz=0.0),
        cam_height=cam_height,
        fv_shape=(int(h), int(w)),
        bev_shape=(int(hb), int(wb)),
        max_depth=max_depth,
    )


# ─────────────────────────────────────────────────────────────────────────────
# Splatting
# ─────────────────────────────────────────────────────────────────────────────

def _splat(u, v, value, valid, h, w, reduce):
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    inside = valid & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    fill = np.inf if reduce is np.minimum else -np.inf
    grid = np.full(h * w, fill, dtype=np.float64)
    reduce.at(grid, vi[inside] * w + ui[inside], value[inside])
    grid = grid.reshape(h, w)
    mask = np.isfinite(grid)
    values = np.where(mask, grid, 0.0)
    return values, mask, int(np.count_nonzero(~inside))


def rasterize_fv(cloud: PointCloud, t: RigidTransform, k: CameraIntrinsics, h: int, w: int) -> InfoMap:
    """Frontal-view depth map of `cloud` seen through extrinsic `t` (z-buffered)."""
    if len(cloud) == 0:
        return InfoMap.empty(h, w, 'FV', _source_of(cloud), k)
    u, v, depth, valid = project_fv_many(t.apply(cloud.points), k)
    values, mask, dropped = _splat(u, v, depth, valid, h, w, np.minimum)
    return InfoMap(values, mask, 'FV', _source_of(cloud), k, dropped)


def rasterize_bev(cloud: PointCloud, t: RigidTransform, k_bev: BevIntrinsics,
                  cam_height: float, h: int, w: int) -> InfoMap:
    """Bird's-eye height map of `cloud`; the tallest point wins a cell."""
    if len(cloud) == 0:
        return InfoMap.empty(h, w, 'BEV', _source_of(cloud), k_bev)
    u, v, height = project_bev_many(t.apply(cloud.points), k_bev, cam_height)
    valid = np.ones(u.shape, dtype=bool)
    values, mask, dropped = _splat(u, v, height, valid, h, w, np.maximum)
    if dropped:
        logger.debug("BEV raster dropped %d of %d points", dropped, len(cloud))
    return InfoMap(values, mask, 'BEV', _source_of(cloud), k_bev, dropped)


def _source_of(cloud: PointCloud) -> Source:
    return 'image' if cloud.sensor == 'pseudo' else 'radar'


def depth_to_pseudo_cloud(depth: InfoMap, k: CameraIntrinsics) -> PointCloud:
    rows, cols = np.nonzero(depth.mask)
    if rows.size == 0:
        return PointCloud(np.zeros((0, 3)), 'pseudo')
    d = depth.values[rows, cols].astype(np.float64)
    return PointCloud(unproject_depth_many(cols, rows, d, k), 'pseudo')


def depth_to_pseudo_bev(depth: InfoMap, k: CameraIntrinsics, k_bev: BevIntrinsics,
                        cam_height: float, h: int, w: int) -> InfoMap:
    """Unproject every occupied depth pixel and rasterize the pseudo cloud top-down."""
    if depth.view != 'FV':
        raise ValueError(f"pseudo-BEV needs an FV depth map, got {depth.view}")
    cloud = depth_to_pseudo_cloud(depth, k)
    out = rasterize_bev(cloud, RigidTransform.identity(), k_bev, cam_height, h, w)
    return InfoMap(out.values, out.mask, 'BEV', 'image', k_bev, out.dropped)


def depth_to_grayscale(depth: InfoMap, max_depth: float) -> InfoMap:
    """Grayscale rendering of a depth map (near = bright), the context-branch input."""
    gray = np.where(depth.mask, 1.0 - np.clip(depth.values / max_depth, 0.0, 1.0), 0.0)
    return InfoMap(gray, depth.mask & (gray != 0), 'FV', 'image', depth.intrinsics)


def network_input(info: InfoMap, scale: float | None = None) -> np.ndarray:
    """(1, H, W) float32 plane; divided by `scale` when maps are normalized."""
    values = info.values if scale is None else info.values / np.float32(scale)
    return values[None].astype(np.float32)


def residual_map(radar: InfoMap, image: InfoMap) -> InfoMap:
    """Radar value minus image value on the cells both maps occupy."""
    if radar.shape != image.shape or radar.view != image.view:
        raise ValueError(f"cannot compare a {radar.view} {radar.shape} map with a {image.view} {image.shape} map")
    mask = radar.mask & image.mask
    values = np.where(mask, radar.values - image.values, 0.0)
    return InfoMap(values, mask, radar.view, 'radar', radar.intrinsics)


def radar_input(radar: InfoMap, image: InfoMap, scale: float | None = None) -> np.ndarray:
    """(2, H, W): the radar map and its residual against the image map of the same view."""
    return np.concatenate([network_input(radar, scale), network_input(residual_map(radar, image), scale)])
