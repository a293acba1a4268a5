"""Self-describing binary record files for training state.

Layout: magic "IGAN", version u32, then repeated records of
[name length u32, name bytes (utf-8), dtype tag u8, rank u32,
extents u32 x rank, payload little-endian f32]. All integers little
endian. Values are stored in 32 bits and widened to 64 on load.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointMagicError,
    CheckpointNameCollisionError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

MAGIC = b"IGAN"
VERSION = 1
DTYPE_F32 = 0


def write_records(path, records: dict[str, np.ndarray]):
    """Write name -> array records in iteration order, each as f32."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in records.items():
            arr = np.asarray(arr, dtype=np.float64)
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BI", DTYPE_F32, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())


class _Reader:
    def __init__(self, path):
        self.path = path
        self.buf = Path(path).read_bytes()
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(f"{self.path}: truncated {what}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def done(self) -> bool:
        return self.pos == len(self.buf)


def read_records(path) -> dict[str, np.ndarray]:
    """Parse a record file back into name -> float64 array."""
    r = _Reader(path)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported checkpoint version {version}, expected {VERSION}"
        )
    records: dict[str, np.ndarray] = {}
    while not r.done():
        (name_len,) = struct.unpack("<I", r.take(4, "record name length"))
        name = r.take(name_len, "record name").decode("utf-8")
        dtype, rank = struct.unpack("<BI", r.take(5, f"record header of {name!r}"))
        if dtype != DTYPE_F32:
            raise CheckpointVersionError(f"{path}: unknown dtype tag {dtype} in {name!r}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank, f"extents of {name!r}"))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.take(4 * count, f"payload of {name!r}")
        if name in records:
            raise CheckpointNameCollisionError(f"{path}: duplicate record {name!r}")
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)
        records[name] = arr
    return records


def quantize(arr: np.ndarray) -> np.ndarray:
    """Round-trip through stored precision, so live state equals what a
    save would persist."""
    return arr.astype("<f4").astype(np.float64)
