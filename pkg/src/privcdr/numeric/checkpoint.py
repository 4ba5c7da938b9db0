"""``P2CK`` parameter checkpoints.

Layout (little-endian): magic ``P2CK``, u16 version, then one record per
parameter until end of file: u16 name length, UTF-8 name, u32 rows,
u32 cols, rows*cols f32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"P2CK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC + struct.pack("<H", VERSION))
    for name, arr in params.items():
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise CheckpointError(f"parameter {name!r} is not 2-D: {arr.shape}")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<II", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(out)


def loads_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a P2CK checkpoint")
    if len(blob) < 6:
        raise CheckpointError("truncated checkpoint header")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos, params = 6, {}
    while pos < len(blob):
        try:
            (nlen,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2: pos + 2 + nlen].decode("utf-8")
            pos += 2 + nlen
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
        except struct.error:
            raise CheckpointError(f"truncated record at byte {pos}") from None
        nbytes = rows * cols * 4
        if pos + nbytes > len(blob):
            raise CheckpointError(f"truncated data for {name!r}: expected {nbytes} bytes, got {len(blob) - pos}")
        params[name] = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=pos).reshape(rows, cols).astype(np.float32)
        pos += nbytes
    return params


def save_checkpoint(path, params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_checkpoint(params))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return loads_checkpoint(Path(path).read_bytes())
