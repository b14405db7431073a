"""
Binary checkpoint format.

    magic      4 bytes  b'RCKP'
    version    u32
    meta_len   u32, followed by UTF-8 JSON metadata (config, epoch, step, rng state)
    count      u32
    entries    count × { name_len u16, name, dtype u8 (1 = <f4, 2 = <f8), rank u8,
                         dims u32 × rank, raw little-endian data }
    crc32      u32 over everything before it

Model parameters are stored as float32, optimizer moments as float64, so a
save/load cycle is bit-exact for both.
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b'RCKP'
VERSION = 1
_DTYPES = {1: np.dtype('<f4'), 2: np.dtype('<f8')}
_CODES = {np.dtype('float32'): 1, np.dtype('float64'): 2}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def split(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def without(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(prefix)}


def save_checkpoint(path, tensors: dict[str, np.ndarray], metadata: dict | None = None) -> Path:
    path = Path(path)
    meta = json.dumps(metadata or {}, sort_keys=True).encode('utf-8')
    chunks = [MAGIC, struct.pack('<II', VERSION, len(meta)), meta, struct.pack('<I', len(tensors))]
    for name in sorted(tensors):
        array = np.asarray(tensors[name])
        code = _CODES.get(array.dtype, 1)
        array = np.ascontiguousarray(array, dtype=_DTYPES[code])
        raw_name = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(raw_name)) + raw_name)
        chunks.append(struct.pack('<BB', code, array.ndim) + struct.pack(f'<{array.ndim}I', *array.shape))
        chunks.append(array.tobytes())
    body = b''.join(chunks)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack('<I', zlib.crc32(body)))
    logger.debug("checkpoint written: %s (%d tensors)", path, len(tensors))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    body, (crc,) = raw[:-4], struct.unpack('<I', raw[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    version, meta_len = struct.unpack_from('<II', body, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    metadata = json.loads(body[offset:offset + meta_len].decode('utf-8'))
    offset += meta_len
    (count,) = struct.unpack_from('<I', body, offset)
    offset += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from('<H', body, offset)
        offset += 2
        name = body[offset:offset + name_len].decode('utf-8')
        offset += name_len
        code, rank = struct.unpack_from('<BB', body, offset)
        offset += 2
        shape = struct.unpack_from(f'<{rank}I', body, offset)
        offset += 4 * rank
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(body, dtype=dtype, count=nbytes // dtype.itemsize,
                                      offset=offset).reshape(shape).astype(dtype.newbyteorder('='))
        offset += nbytes
    return Checkpoint(tensors, metadata)
