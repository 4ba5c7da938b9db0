"""Dense modality feature tables and the ``P2FT`` container.

Container layout (little-endian): magic ``P2FT``, u32 rows, u32 dims,
u8 entity code, u8 modality code, rows*dims f32 values, then the
newline-separated row keys in UTF-8.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .interactions import DatasetError

MAGIC = b"P2FT"
ENTITY_CODES = {"user": 0, "item": 1}
MODALITY_CODES = {"review": 0, "text": 1, "visual": 2, "emb": 3}
_HEADER = struct.Struct("<4sIIBB")


@dataclass(frozen=True, eq=False)
class FeatureTable:
    entity: str
    modality: str
    matrix: np.ndarray
    keys: tuple[str, ...]
    missing: np.ndarray | None = None

    def __post_init__(self):
        if self.entity not in ENTITY_CODES:
            raise DatasetError(f"unknown entity {self.entity!r}")
        if self.modality not in MODALITY_CODES:
            raise DatasetError(f"unknown modality {self.modality!r}")
        matrix = np.asarray(self.matrix, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[0] != len(self.keys):
            raise DatasetError(f"feature matrix {matrix.shape} does not match {len(self.keys)} keys")
        if not np.all(np.isfinite(matrix)):
            raise DatasetError(f"{self.entity}/{self.modality} features contain NaN or Inf")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "keys", tuple(self.keys))
        if self.missing is None:
            object.__setattr__(self, "missing", np.zeros(len(self.keys), dtype=bool))

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dims(self) -> int:
        return self.matrix.shape[1]

    def align(self, keys: Sequence[str]) -> "FeatureTable":
        """Reorder rows to ``keys``; absent keys get a zero row flagged missing."""
        index = {k: r for r, k in enumerate(self.keys)}
        out = np.zeros((len(keys), self.dims), dtype=np.float32)
        missing = np.ones(len(keys), dtype=bool)
        for r, key in enumerate(keys):
            src = index.get(key)
            if src is not None and not self.missing[src]:
                out[r] = self.matrix[src]
                missing[r] = False
        return FeatureTable(self.entity, self.modality, out, tuple(keys), missing)

    def standardize(self) -> "FeatureTable":
        """Per-column z-scores over present rows; missing rows stay zero."""
        present = ~self.missing
        out = np.zeros_like(self.matrix)
        if present.any():
            block = self.matrix[present].astype(np.float64)
            std = block.std(axis=0)
            std[std == 0] = 1.0
            out[present] = ((block - block.mean(axis=0)) / std).astype(np.float32)
        return FeatureTable(self.entity, self.modality, out, self.keys, self.missing.copy())


def dumps_feature_table(table: FeatureTable) -> bytes:
    head = _HEADER.pack(MAGIC, table.rows, table.dims, ENTITY_CODES[table.entity], MODALITY_CODES[table.modality])
    body = np.ascontiguousarray(table.matrix, dtype="<f4").tobytes()
    return head + body + "\n".join(table.keys).encode("utf-8")


def loads_feature_table(blob: bytes) -> FeatureTable:
    if len(blob) < _HEADER.size or blob[:4] != MAGIC:
        raise DatasetError("not a P2FT feature table")
    _, rows, dims, ecode, mcode = _HEADER.unpack_from(blob)
    entity = {v: k for k, v in ENTITY_CODES.items()}.get(ecode)
    modality = {v: k for k, v in MODALITY_CODES.items()}.get(mcode)
    if entity is None or modality is None:
        raise DatasetError(f"bad entity/modality code {ecode}/{mcode}")
    nbytes = rows * dims * 4
    end = _HEADER.size + nbytes
    if len(blob) < end:
        raise DatasetError(f"truncated P2FT payload: expected {nbytes} bytes, got {len(blob) - _HEADER.size}")
    matrix = np.frombuffer(blob, dtype="<f4", count=rows * dims, offset=_HEADER.size).reshape(rows, dims)
    text = blob[end:].decode("utf-8")
    keys = tuple(text.split("\n")) if rows else ()
    if len(keys) != rows:
        raise DatasetError(f"P2FT key list has {len(keys)} entries for {rows} rows")
    matrix = matrix.astype(np.float32)
    return FeatureTable(entity, modality, matrix, keys, ~matrix.any(axis=1))


def write_feature_table(path, table: FeatureTable) -> None:
    Path(path).write_bytes(dumps_feature_table(table))


def read_feature_table(path) -> FeatureTable:
    return loads_feature_table(Path(path).read_bytes())
