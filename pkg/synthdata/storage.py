"""
Dataset directory layout:

    <dir>/manifest.json             format version, rig, generator settings, samples
    <dir>/samples/<id>/radar.bin    (n, 3) float32, radar frame
    <dir>/samples/<id>/labels.bin   (n,)   int32, 0 surface / 1 ghost
    <dir>/samples/<id>/lidar.bin    (n, 3) float32, camera frame
    <dir>/samples/<id>/depth.bin    (H, W) float32

Every blob starts with a 16-byte little-endian header:
magic b'RCB1', dtype code u16, rank u16, dim0 u32, dim1 u32 (0 when unused).
The manifest records a sha256 per blob and T_gt as a row-major 4×4.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from geometry.cameras import PointCloud
from geometry.transforms import RigidTransform
from raster.maps import InfoMap, SensorRig

from .sensors import Sample, split_of

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b'RCB1'
HEADER = struct.Struct('<4sHHII')
DTYPE_CODES = {1: np.dtype('<f4'), 2: np.dtype('<i4')}
_CODE_OF = {np.dtype('float32'): 1, np.dtype('int32'): 2}


class DatasetError(Exception):
    pass


class FormatVersionError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class TruncatedBlobError(DatasetError):
    pass


class MissingBlobError(DatasetError):
    pass


@dataclass
class Dataset:
    rig: SensorRig
    samples: list[Sample]
    metadata: dict = field(default_factory=dict)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def by_id(self, sample_id: str) -> Sample:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise DatasetError(f"No sample with id {sample_id}")


# ─────────────────────────────────────────────────────────────────────────────
# Blobs
# ─────────────────────────────────────────────────────────────────────────────

def encode_blob(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    code = _CODE_OF[array.dtype]
    if array.ndim not in (1, 2):
        raise ValueError(f"blobs hold rank 1 or 2 arrays, got rank {array.ndim}")
    dims = list(array.shape) + [0] * (2 - array.ndim)
    header = HEADER.pack(MAGIC, code, array.ndim, *dims)
    return header + np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()


def decode_blob(raw: bytes, name: str = 'blob') -> np.ndarray:
    if len(raw) < HEADER.size:
        raise TruncatedBlobError(f"{name}: shorter than its header")
    magic, code, rank, dim0, dim1 = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetError(f"{name}: bad blob magic {magic!r}")
    if code not in DTYPE_CODES or rank not in (1, 2):
        raise DatasetError(f"{name}: unsupported dtype code {code} or rank {rank}")
    shape = (dim0,) if rank == 1 else (dim0, dim1)
    dtype = DTYPE_CODES[code]
    expected = HEADER.size + int(np.prod(shape)) * dtype.itemsize
    if len(raw) < expected:
        raise TruncatedBlobError(f"{name}: {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=HEADER.size)
    return data.reshape(shape).astype(dtype.newbyteorder('='))


def _write_blob(path: Path, array) -> dict:
    raw = encode_blob(array)
    path.write_bytes(raw)
    return {'sha256': hashlib.sha256(raw).hexdigest(), 'bytes': len(raw)}


def _read_blob(root: Path, entry: dict, name: str) -> np.ndarray:
    path = root / entry['path']
    if not path.is_file():
        raise MissingBlobError(f"missing blob {entry['path']} ({name})")
    raw = path.read_bytes()
    if hashlib.sha256(raw).hexdigest() != entry['sha256']:
        if len(raw) < entry.get('bytes', 0):
            raise TruncatedBlobError(f"{entry['path']}: truncated ({len(raw)} of {entry['bytes']} bytes)")
        raise ChecksumError(f"{entry['path']}: checksum mismatch")
    return decode_blob(raw, entry['path'])


# ─────────────────────────────────────────────────────────────────────────────
# Dataset
# ─────────────────────────────────────────────────────────────────────────────

def sample_entry(sample: Sample) -> dict:
    labels = sample.radar.labels if sample.radar.labels is not None else np.zeros(len(sample.radar))
    return {
        'id': sample.sample_id,
        'index': sample.index,
        'split': split_of(sample.index),
        't_gt': sample.t_gt.as_row_major(),
        'radar_points': len(sample.radar),
        'ghost_points': int(np.sum(labels == 1)),
        'lidar_points': len(sample.lidar),
        'depth_pixels': sample.depth.occupied,
    }


def write_dataset(samples: list[Sample], directory, rig: SensorRig, metadata: dict | None = None) -> Path:
    """Write blobs and `manifest.json`; identical inputs give byte-identical files."""
    root = Path(directory)
    try:
        (root / 'samples').mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {root}: {exc}")
    entries = []
    for sample in samples:
        sample_dir = root / 'samples' / sample.sample_id
        sample_dir.mkdir(parents=True, exist_ok=True)
        labels = sample.radar.labels if sample.radar.labels is not None else np.zeros(len(sample.radar))
        arrays = {
            'radar': sample.radar.points.astype(np.float32),
            'labels': np.asarray(labels, dtype=np.int32),
            'lidar': sample.lidar.points.astype(np.float32),
            'depth': sample.depth.values.astype(np.float32),
        }
        blobs = {}
        for name, array in arrays.items():
            rel = f"samples/{sample.sample_id}/{name}.bin"
            blobs[name] = {'path': rel, **_write_blob(root / rel, array)}
        entries.append({**sample_entry(sample), 'blobs': blobs})
    manifest = {
        'format_version': FORMAT_VERSION,
        'rig': rig.as_dict(),
        'metadata': metadata or {},
        'samples': entries,
    }
    path = root / 'manifest.json'
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    logger.info("wrote %d samples to %s", len(samples), root)
    return path


def read_manifest(directory) -> dict:
    path = Path(directory) / 'manifest.json'
    if not path.is_file():
        raise MissingBlobError(f"missing manifest {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: unreadable manifest ({exc})")
    version = manifest.get('format_version')
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    return manifest


def read_sample(root: Path, entry: dict, rig: SensorRig) -> Sample:
    blobs = entry['blobs']
    radar = _read_blob(root, blobs['radar'], 'radar')
    labels = _read_blob(root, blobs['labels'], 'labels')
    lidar = _read_blob(root, blobs['lidar'], 'lidar')
    depth = _read_blob(root, blobs['depth'], 'depth')
    if depth.shape != tuple(rig.fv_shape):
        raise DatasetError(f"sample {entry['id']}: depth map {depth.shape} does not match rig {rig.fv_shape}")
    return Sample(
        sample_id=entry['id'],
        index=int(entry['index']),
        t_gt=RigidTransform.from_matrix(entry['t_gt']),
        radar=PointCloud(radar.reshape(-1, 3).astype(np.float64), 'radar', labels=labels),
        lidar=PointCloud(lidar.reshape(-1, 3).astype(np.float64), 'lidar'),
        depth=InfoMap(depth, depth > 0, 'FV', 'image', rig.k),
    )


def read_dataset(directory, ids=None) -> Dataset:
    root = Path(directory)
    manifest = read_manifest(root)
    rig = SensorRig.from_dict(manifest['rig'])
    entries = manifest['samples']
    if ids is not None:
        wanted = set(ids)
        entries = [e for e in entries if e['id'] in wanted]
    samples = [read_sample(root, entry, rig) for entry in entries]
    return Dataset(rig, samples, manifest.get('metadata', {}))


def read_sample_dir(sample_dir) -> tuple[Sample, SensorRig]:
    """Load one sample from `<dataset>/samples/<id>`."""
    sample_dir = Path(sample_dir)
    root = sample_dir.parent.parent
    manifest = read_manifest(root)
    rig = SensorRig.from_dict(manifest['rig'])
    for entry in manifest['samples']:
        if entry['id'] == sample_dir.name:
            return read_sample(root, entry, rig), rig
    raise DatasetError(f"sample {sample_dir.name} is not listed in {root / 'manifest.json'}")
