from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transforms import RigidTransform, matrix_to_euler


@dataclass(frozen=True)
class CalibrationError:
    euler_abs: np.ndarray  # roll, pitch, yaw (radians)
    trans_abs: np.ndarray  # x, y, z (meters)

    @property
    def mean_rotation(self) -> float:
        return float(np.mean(self.euler_abs))

    @property
    def mean_translation(self) -> float:
        return float(np.mean(self.trans_abs))

    def as_report_row(self) -> dict:
        """Degrees and centimeters, in the Mean/Roll/Pitch/Yaw/Mean/X/Y/Z layout."""
        deg = np.degrees(self.euler_abs)
        cm = self.trans_abs * 100.0
        return {
            'rot_mean_deg': float(np.mean(deg)),
            'roll_deg': float(deg[0]),
            'pitch_deg': float(deg[1]),
            'yaw_deg': float(deg[2]),
            'trans_mean_cm': float(np.mean(cm)),
            'x_cm': float(cm[0]),
            'y_cm': float(cm[1]),
            'z_cm': float(cm[2]),
        }


def calibration_error(pred: RigidTransform, gt: RigidTransform) -> CalibrationError:
    """Per-axis absolute error of the relative rotation (as Euler angles) and of the translation."""
    relative = gt.rotation.T @ pred.rotation
    euler_abs = np.abs(matrix_to_euler(relative))
    trans_abs = np.abs(pred.translation - gt.translation)
    return CalibrationError(euler_abs, trans_abs)
