"""SGT1 binary tensor files.

Layout (little-endian): ``b"SGT1"``, dtype code ``u8`` (0 = float32,
1 = float64), rank ``u8``, ``rank`` dimensions as ``u32``, then the raw
row-major payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"SGT1"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TensorFormatError(ValueError):
    pass


def encode(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in _CODES:
        raise TypeError(f"SGT1 stores float32 or float64, got {array.dtype}")
    if array.ndim > 255:
        raise ValueError("rank must fit in one byte")
    header = MAGIC + struct.pack("<BB", _CODES[array.dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[_CODES[array.dtype]]).tobytes()
    return header + payload


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 6:
        raise TensorFormatError(f"{source}: truncated header ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"{source}: bad magic {buf[:4]!r} at offset 0, expected {MAGIC!r}")
    code, rank = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPES:
        raise TensorFormatError(f"{source}: unknown dtype code {code} at offset 4")
    end = 6 + 4 * rank
    if len(buf) < end:
        raise TensorFormatError(f"{source}: truncated dimension list at offset 6")
    shape = struct.unpack_from(f"<{rank}I", buf, 6)
    dtype = _DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) - end != expected:
        raise TensorFormatError(
            f"{source}: payload at offset {end} has {len(buf) - end} bytes, expected {expected}"
        )
    return np.frombuffer(buf, dtype=dtype, offset=end).reshape(shape).astype(dtype.newbyteorder("="))


def save(path: str | os.PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), str(path))
