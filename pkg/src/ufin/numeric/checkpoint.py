"""Binary checkpoint files for named parameter sets.

Layout: magic ``UFNP``, u32 version, then one blob per parameter in write
order.  Each blob is a u32-length-prefixed UTF-8 name, a u32 rank followed
by that many u32 dims, and the row-major float64 little-endian values.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ufin.errors import DataError
from ufin.numeric.tensor import Tensor

MAGIC = b"UFNP"
VERSION = 1


def save_checkpoint(path, params: Mapping[str, "Tensor | np.ndarray"]) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    for name, p in params.items():
        values = p.values if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", values.ndim)
        for dim in values.shape:
            out += struct.pack("<I", dim)
        out += values.astype("<f8", copy=False).tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a UFNP checkpoint (bad magic {raw[:4]!r})")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    off = 8
    try:
        while off < len(raw):
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, off) if ndim else ()
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            values = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            params[name] = values.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint") from exc
    return params
