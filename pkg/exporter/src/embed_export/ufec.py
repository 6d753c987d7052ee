"""Writer for the UFEC binary cache of pooled text vectors.

Byte layout (shared contract with the training side): magic ``UFEC``,
u32 version = 1, u32 d_V, u64 entry count, then per entry a u64 row id
followed by d_V little-endian float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

MAGIC = b"UFEC"
VERSION = 1


def write_ufec(path, d_v: int, entries: Iterable[tuple[int, np.ndarray]]) -> int:
    """Stream (row_id, vector) pairs to disk; returns the entry count."""
    entries = list(entries)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", d_v)
    out += struct.pack("<Q", len(entries))
    for row_id, vec in entries:
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (d_v,):
            raise ValueError(f"row {row_id}: vector shape {vec.shape} != ({d_v},)")
        out += struct.pack("<Q", int(row_id))
        out += vec.astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(bytes(out))
    return len(entries)
