"""
Map export for inspection: 8-bit PGM images and raw little-endian float32 blobs.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .maps import InfoMap


def to_gray8(values, mask=None, vmax=None) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    if vmax is None:
        vmax = float(values[mask].max()) if mask.any() else 1.0
    vmax = vmax if vmax > 0 else 1.0
    gray = np.clip(values / vmax, 0.0, 1.0) * 255.0
    return np.where(mask, np.rint(gray), 0).astype(np.uint8)


def write_pgm(path, gray: np.ndarray, marks=None) -> Path:
    """Binary PGM (P5). `marks` is an iterable of (row, col) pixels drawn at full white."""
    path = Path(path)
    gray = np.array(gray, dtype=np.uint8)
    if marks is not None:
        h, w = gray.shape
        for row, col in marks:
            if 0 <= row < h and 0 <= col < w:
                gray[row, col] = 255
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode('ascii')
    path.write_bytes(header + gray.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b'\n', 3)
    if parts[0] != b'P5':
        raise ValueError(f"{path} is not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def write_float_blob(path, values) -> Path:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(values, dtype='<f4').tobytes())
    return path


def read_float_blob(path, shape) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype='<f4')
    return data.reshape(shape).astype(np.float32)


def export_map(info: InfoMap, stem, vmax=None) -> tuple[Path, Path]:
    """Write `<stem>.pgm` and `<stem>.f32` for an information map."""
    stem = Path(stem)
    pgm = write_pgm(stem.with_suffix('.pgm'), to_gray8(info.values, info.mask, vmax))
    blob = write_float_blob(stem.with_suffix('.f32'), info.values)
    return pgm, blob
