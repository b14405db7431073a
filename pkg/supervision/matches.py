"""
Ground-truth correspondences between image and radar feature cells.

`reliability_filter` keeps radar points whose noise box holds at least τ LiDAR
points (the test only applies to FV supervision). `gt_matches` projects each
radar point twice: with the true extrinsic into the image grid and with the
current estimate into the radar grid; the pair of cells is a positive match.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from geometry.cameras import BevIntrinsics, CameraIntrinsics, PointCloud, project_bev_many, project_fv_many
from geometry.transforms import RigidTransform

from .noise_box import noise_boxes

logger = logging.getLogger(__name__)

STRIDE = 8


# ─────────────────────────────────────────────────────────────────────────────
# Uniform-grid spatial index
# ─────────────────────────────────────────────────────────────────────────────

class UniformGrid:
    """Bucket points into cubic cells; box queries scan the covered cells only."""

    def __init__(self, points, cell_size: float):
        if not cell_size > 0:
            raise ValueError(f"cell size must be positive, got {cell_size}")
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.cell_size = float(cell_size)
        keys = np.floor(self.points / self.cell_size).astype(np.int64)
        order = np.lexsort(keys.T[::-1])
        self.order = order
        self.table: dict[tuple[int, int, int], np.ndarray] = {}
        if len(order):
            sorted_keys = keys[order]
            change = np.any(np.diff(sorted_keys, axis=0) != 0, axis=1)
            starts = np.concatenate([[0], np.nonzero(change)[0] + 1])
            ends = np.concatenate([starts[1:], [len(order)]])
            for s, e in zip(starts, ends):
                self.table[tuple(int(k) for k in sorted_keys[s])] = order[s:e]

    def query_box(self, center: np.ndarray, half: np.ndarray) -> np.ndarray:
        """Indices of points p with |p - center| <= half on every axis."""
        lo = np.floor((center - half) / self.cell_size).astype(np.int64)
        hi = np.floor((center + half) / self.cell_size).astype(np.int64)
        found = []
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for k in range(lo[2], hi[2] + 1):
                    bucket = self.table.get((i, j, k))
                    if bucket is not None:
                        found.append(bucket)
        if not found:
            return np.zeros(0, dtype=np.int64)
        candidates = np.concatenate(found)
        inside = np.all(np.abs(self.points[candidates] - center) <= half, axis=1)
        return candidates[inside]


def support_counts(radar_points, lidar_points, delta: float, delta_s: float) -> np.ndarray:
    """LiDAR points inside each radar point's noise box, through the grid index."""
    radar_points = np.asarray(radar_points, dtype=np.float64).reshape(-1, 3)
    if len(radar_points) == 0:
        return np.zeros(0, dtype=np.int64)
    centers, half = noise_boxes(radar_points, delta, delta_s)
    grid = UniformGrid(lidar_points, cell_size=2.0 * float(half.max()))
    return np.array([len(grid.query_box(c, h)) for c, h in zip(centers, half)], dtype=np.int64)


def support_counts_bruteforce(radar_points, lidar_points, delta: float, delta_s: float) -> np.ndarray:
    radar_points = np.asarray(radar_points, dtype=np.float64).reshape(-1, 3)
    lidar = np.asarray(lidar_points, dtype=np.float64).reshape(-1, 3)
    if len(radar_points) == 0:
        return np.zeros(0, dtype=np.int64)
    centers, half = noise_boxes(radar_points, delta, delta_s)
    return np.array([int(np.sum(np.all(np.abs(lidar - c) <= h, axis=1))) for c, h in zip(centers, half)],
                    dtype=np.int64)


def reliability_filter(radar: PointCloud, lidar: PointCloud, delta: float = 1.0,
                       delta_s: float = 0.5, tau: int = 3) -> PointCloud:
    """Both clouds in the camera frame. Points within δ of the sensor are never reliable."""
    pts = radar.points
    reliable = np.zeros(len(pts), dtype=bool)
    usable = np.linalg.norm(pts, axis=1) > delta
    if usable.any() and len(lidar):
        reliable[usable] = support_counts(pts[usable], lidar.points, delta, delta_s) >= tau
    logger.debug("reliability filter: %d of %d radar points supported", int(reliable.sum()), len(pts))
    return radar.with_reliability(reliable)


# ─────────────────────────────────────────────────────────────────────────────
# Match matrix
# ─────────────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class MatchMatrix:
    m: np.ndarray  # (m, m) 0/1, rows image cells, columns radar cells

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.int8)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"match matrix must be square, got {m.shape}")
        if np.any((m != 0) & (m != 1)):
            raise ValueError("match matrix must be binary")
        if np.any(m.sum(axis=0) > 1) or np.any(m.sum(axis=1) > 1):
            raise ValueError("match matrix rows and columns admit at most one match")
        object.__setattr__(self, 'm', m)

    @property
    def no_match_image(self) -> np.ndarray:
        return (1 - self.m.sum(axis=1)).astype(np.int8)

    @property
    def no_match_radar(self) -> np.ndarray:
        return (1 - self.m.sum(axis=0)).astype(np.int8)

    @property
    def positives(self) -> int:
        return int(self.m.sum())

    def pairs(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.m)
        return [(int(i), int(j)) for i, j in zip(rows, cols)]

    @classmethod
    def from_pairs(cls, size: int, pairs) -> MatchMatrix:
        m = np.zeros((size, size), dtype=np.int8)
        for i, j in pairs:
            m[i, j] = 1
        return cls(m)


def _cells(u, v, valid, map_h, map_w, grid_w):
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    inside = valid & (ui >= 0) & (ui < map_w) & (vi >= 0) & (vi < map_h)
    return (vi // STRIDE) * grid_w + ui // STRIDE, inside


def gt_matches(radar: PointCloud, t_gt: RigidTransform, t_curr: RigidTransform,
               k: CameraIntrinsics | BevIntrinsics, grid_dims: tuple[int, int],
               view: Literal['FV', 'BEV'], reliable_only: bool = True,
               cam_height: float = 0.0) -> MatchMatrix:
    """
    `radar` is in the radar frame; `grid_dims` is the (h, w) feature grid.
    Pairs are taken nearest-first (true camera depth) and kept one-to-one.
    """
    gh, gw = grid_dims
    size = gh * gw
    pts = radar.points
    if view == 'FV' and reliable_only and radar.reliable is not None:
        pts = pts[radar.reliable]
    if len(pts) == 0:
        return MatchMatrix(np.zeros((size, size), dtype=np.int8))

    true_pts = t_gt.apply(pts)
    curr_pts = t_curr.apply(pts)
    map_h, map_w = gh * STRIDE, gw * STRIDE
    if view == 'FV':
        u, v, _, valid = project_fv_many(true_pts, k)
        i_cell, i_in = _cells(u, v, valid, map_h, map_w, gw)
        u, v, _, valid = project_fv_many(curr_pts, k)
        j_cell, j_in = _cells(u, v, valid, map_h, map_w, gw)
    elif view == 'BEV':
        ones = np.ones(len(pts), dtype=bool)
        u, v, _ = project_bev_many(true_pts, k, cam_height)
        i_cell, i_in = _cells(u, v, ones, map_h, map_w, gw)
        u, v, _ = project_bev_many(curr_pts, k, cam_height)
        j_cell, j_in = _cells(u, v, ones, map_h, map_w, gw)
    else:
        raise ValueError(f"Unknown view: {view}")

    keep = i_in & j_in
    order = np.argsort(true_pts[:, 2], kind='stable')
    m = np.zeros((size, size), dtype=np.int8)
    row_taken = np.zeros(size, dtype=bool)
    col_taken = np.zeros(size, dtype=bool)
    for idx in order:
        if not keep[idx]:
            continue
        i, j = i_cell[idx], j_cell[idx]
        if row_taken[i] or col_taken[j]:
            continue
        m[i, j] = 1
        row_taken[i] = col_taken[j] = True
    return MatchMatrix(m)
