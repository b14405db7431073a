from __future__ import annotations

from pathlib import Path

import numpy as np

from raster.export import to_gray8, write_float_blob, write_pgm

from .extractor import STRIDE


def upsample(heatmap: np.ndarray, stride: int = STRIDE) -> np.ndarray:
    """Nearest-neighbour blow-up of a feature-grid heatmap to map resolution."""
    return np.kron(np.asarray(heatmap, dtype=np.float32), np.ones((stride, stride), dtype=np.float32))


def export_heatmap(heatmap: np.ndarray, stem, marks=None) -> tuple[Path, Path]:
    """
    Write `<stem>.f32` (feature-grid values) and `<stem>.pgm` (upsampled, with
    the given (row, col) map pixels, usually projected radar points, marked).
    """
    stem = Path(stem)
    blob = write_float_blob(stem.with_suffix('.f32'), heatmap)
    gray = to_gray8(upsample(heatmap), vmax=1.0)
    pgm = write_pgm(stem.with_suffix('.pgm'), gray, marks)
    return pgm, blob
