"""
Adaptive boxes around radar points for the LiDAR reliability test.

A radar return is recorded on the radar plane; the actual reflector may sit up
to δ above or below it, which shortens its true horizontal range. The box spans
that shortening along X and Z plus a sensor misalignment margin Δs on every
side, and ±(δ + Δs) vertically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegeneratePointError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseBox:
    center: tuple[float, float, float]
    h_b: float
    w_b: float
    d_b: float

    def __post_init__(self):
        if not (self.h_b > 0 and self.w_b > 0 and self.d_b > 0):
            raise ValueError(f"noise box extents must be positive: {self.h_b}, {self.w_b}, {self.d_b}")

    @property
    def half_extents(self) -> np.ndarray:
        return np.array([self.w_b, self.h_b, self.d_b]) / 2.0

    @property
    def max_extent(self) -> float:
        return max(self.h_b, self.w_b, self.d_b)

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all(np.abs(pts - np.asarray(self.center)) <= self.half_extents, axis=1)


def noise_box(radar_point, delta: float, delta_s: float) -> NoiseBox:
    """Box for one camera-frame radar point; θ is the azimuth atan2(X, Z)."""
    x, y, z = (float(c) for c in np.asarray(radar_point, dtype=np.float64).reshape(3))
    r = float(np.sqrt(x * x + y * y + z * z))
    if r <= delta:
        raise DegeneratePointError(f"point range {r:.4f} m does not exceed δ={delta}")
    cos_phi = np.sqrt(1.0 - (delta / r) ** 2)
    theta = np.arctan2(x, z)
    dx = r * np.sin(theta) * (1.0 - cos_phi)
    dz = r * np.cos(theta) * (1.0 - cos_phi)
    return NoiseBox(
        center=(x - dx / 2.0, y, z - dz / 2.0),
        h_b=2.0 * (delta + delta_s),
        w_b=abs(dx) + 2.0 * delta_s,
        d_b=abs(dz) + 2.0 * delta_s,
    )


def noise_boxes(points, delta: float, delta_s: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Vectorised `noise_box`: returns (centers (n, 3), half extents (n, 3) as
    (w/2, h/2, d/2)). Degenerate points raise.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r <= delta):
        raise DegeneratePointError(f"{int(np.sum(r <= delta))} points lie within δ={delta} of the sensor")
    shrink = 1.0 - np.sqrt(1.0 - (delta / np.maximum(r, delta)) ** 2)
    theta = np.arctan2(pts[:, 0], pts[:, 2])
    dx = r * np.sin(theta) * shrink
    dz = r * np.cos(theta) * shrink
    centers = np.column_stack([pts[:, 0] - dx / 2.0, pts[:, 1], pts[:, 2] - dz / 2.0])
    half = np.column_stack([
        np.abs(dx) / 2.0 + delta_s,
        np.full(len(pts), delta + delta_s),
        np.abs(dz) / 2.0 + delta_s,
    ])
    return centers, half
