"""
SE(3) extrinsics and rotation representations.

Rotation vectors and Euler angles are converted through scipy's `Rotation`.
Euler angles are intrinsic X(roll)-Y(pitch)-Z(yaw), the order of the
Roll/Pitch/Yaw error columns in the evaluation report.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

EULER_SEQUENCE = 'XYZ'

# (rotation degrees, translation meters)
MISCALIBRATION_RANGES = {
    'R1': (10.0, 0.25),
    'R2': (20.0, 1.5),
}


def _readonly(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation mapping source-frame points into the target frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = _readonly(self.rotation)
        translation = _readonly(self.translation).reshape(3)
        if rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rotation.shape}")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise ValueError("rigid transform has non-finite entries")
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    # ── constructors ──────────────────────────────────────────────────────

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> RigidTransform:
        m = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(rotvec_to_matrix(rotvec), translation)

    @classmethod
    def from_euler(cls, roll_pitch_yaw, translation=(0.0, 0.0, 0.0), degrees=False) -> RigidTransform:
        return cls(euler_to_matrix(roll_pitch_yaw, degrees=degrees), translation)

    # ── algebra ───────────────────────────────────────────────────────────

    def compose(self, other: RigidTransform) -> RigidTransform:
        """self · other: apply `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return self.compose(other)

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def orthonormalized(self) -> RigidTransform:
        """Nearest rotation (polar decomposition) with the same translation."""
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] *= -1
            r = u @ vt
        return RigidTransform(r, self.translation)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return pts @ self.rotation.T + self.translation

    # ── views ─────────────────────────────────────────────────────────────

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def as_row_major(self) -> list[float]:
        return [float(x) for x in self.as_matrix().reshape(-1)]

    @property
    def rotvec(self) -> np.ndarray:
        return matrix_to_rotvec(self.rotation)

    @property
    def euler(self) -> np.ndarray:
        return matrix_to_euler(self.rotation)

    def allclose(self, other: RigidTransform, atol=1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
                and np.allclose(self.translation, other.translation, atol=atol, rtol=0))

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3))))

    def __repr__(self):
        rpy = np.degrees(self.euler)
        return (f"RigidTransform(rpy_deg=({rpy[0]:.4f}, {rpy[1]:.4f}, {rpy[2]:.4f}), "
                f"t=({self.translation[0]:.4f}, {self.translation[1]:.4f}, {self.translation[2]:.4f}))")


# ─────────────────────────────────────────────────────────────────────────────
# Rotation representations
# ─────────────────────────────────────────────────────────────────────────────

def rotvec_to_matrix(rotvec) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64).reshape(3)).as_matrix()


def matrix_to_rotvec(rotation) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_rotvec()


def euler_to_matrix(roll_pitch_yaw, degrees=False) -> np.ndarray:
    angles = np.asarray(roll_pitch_yaw, dtype=np.float64).reshape(3)
    return Rotation.from_euler(EULER_SEQUENCE, angles, degrees=degrees).as_matrix()


def matrix_to_euler(rotation) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_euler(EULER_SEQUENCE)


def hat(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def right_jacobian(rotvec) -> np.ndarray:
    """Right Jacobian of SO(3): exp(v + d) ≈ exp(v) · exp(J_r(v) d)."""
    v = np.asarray(rotvec, dtype=np.float64).reshape(3)
    phi = float(np.linalg.norm(v))
    k = hat(v)
    if phi < 1e-6:
        return np.eye(3) - 0.5 * k + k @ k / 6.0
    return (np.eye(3)
            - (1.0 - np.cos(phi)) / phi ** 2 * k
            + (phi - np.sin(phi)) / phi ** 3 * (k @ k))


def geodesic_angle(ra, rb) -> float:
    """Angle of the rotation taking `ra` to `rb`, in radians."""
    return float(np.linalg.norm(matrix_to_rotvec(np.asarray(ra).T @ np.asarray(rb))))


# ─────────────────────────────────────────────────────────────────────────────
# Miscalibration
# ─────────────────────────────────────────────────────────────────────────────

def sample_miscalibration(range_rot: float, range_trans: float,
                          rng_seed: int | Sequence[int]) -> RigidTransform:
    """
    Draw a perturbation with each Euler angle uniform in ±range_rot degrees and
    each translation component uniform in ±range_trans meters.
    """
    if range_rot < 0 or range_trans < 0:
        raise ValueError("miscalibration ranges must be non-negative")
    rng = np.random.default_rng(rng_seed)
    euler_deg = rng.uniform(-range_rot, range_rot, size=3)
    trans = rng.uniform(-range_trans, range_trans, size=3)
    if range_rot == 0:
        euler_deg = np.zeros(3)
    if range_trans == 0:
        trans = np.zeros(3)
    return RigidTransform.from_euler(euler_deg, trans, degrees=True)


def perturb(t_gt: RigidTransform, delta: RigidTransform) -> RigidTransform:
    """Miscalibrated extrinsic: rotation R_gt·ΔR, translation t_gt + Δt."""
    return RigidTransform(t_gt.rotation @ delta.rotation, t_gt.translation + delta.translation)


def miscalibration_range(name: str) -> tuple[float, float]:
    try:
        return MISCALIBRATION_RANGES[name.upper()]
    except KeyError:
        raise ValueError(f"Unknown miscalibration range: {name} (expected one of {sorted(MISCALIBRATION_RANGES)})")
