"""Binary checkpoint format for named float64 arrays.

Stage outputs (trained parameters, debiased tensors) are stored as a flat
mapping from string names to arrays so any stage can be resumed without
re-running its upstream work. The layout is fixed so files are bit-exact
across platforms:

* magic ``b"FASD"``
* format version, u32 little-endian (currently 1)
* array count, u32
* per array: name length (u32), UTF-8 name, rank (u32), one u32 per
  dimension, then the row-major float64 little-endian values

Writes go through a temp file plus :func:`os.replace` so a crash mid-write
never leaves a truncated checkpoint behind under the target name.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint"]

MAGIC = b"FASD"
VERSION = 1

_U32 = struct.Struct("<I")


class CheckpointError(ValueError):
    """Corrupt, truncated, or incompatible checkpoint file."""


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Atomically write ``arrays`` to ``path`` in the named-array format.

    Names are stored in the given insertion order; loading preserves it.
    """
    path = Path(path)
    chunks = [MAGIC, _U32.pack(VERSION), _U32.pack(len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(arr.ndim))
        for dim in arr.shape:
            chunks.append(_U32.pack(dim))
        chunks.append(arr.astype("<f8", copy=False).tobytes())
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    """Sequential reader that turns short reads into CheckpointError."""

    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise CheckpointError(
                f"{self.path}: truncated (wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos})"
            )
        out = self.data[self.pos : end]
        self.pos = end
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into a name -> float64 array mapping."""
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        n_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = reader.take(8 * n_values)
        arrays[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    if reader.pos != len(reader.data):
        raise CheckpointError(
            f"{path}: {len(reader.data) - reader.pos} trailing bytes after last array"
        )
    return arrays
