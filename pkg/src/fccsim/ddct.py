"""DDCT tensor files.

Layout (little-endian): ``b"DDCT"``, u8 version (1), u8 dtype code, u8 ndims,
ndims x u32 dims, then the row-major payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DDCT"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("<i4"), 3: np.dtype("<i2")}
CODES = {v.kind + str(v.itemsize): k for k, v in DTYPES.items()}


class DdctError(ValueError):
    pass


def encode(arr, dtype=None) -> bytes:
    a = np.asarray(arr)
    if dtype is not None:
        a = a.astype(dtype)
    key = a.dtype.kind + str(a.dtype.itemsize)
    if key not in CODES:
        raise DdctError(f"dtype {a.dtype} has no DDCT code")
    code = CODES[key]
    if a.ndim > 255:
        raise DdctError("too many dimensions")
    head = MAGIC + struct.pack("<BBB", VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise DdctError("not a DDCT file (bad magic)")
    version, code, ndims = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise DdctError(f"unsupported DDCT version {version}")
    if code not in DTYPES:
        raise DdctError(f"unknown dtype code {code}")
    off = 7 + 4 * ndims
    if len(buf) < off:
        raise DdctError("truncated header")
    dims = struct.unpack_from(f"<{ndims}I", buf, 7)
    dt = DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) - off != n * dt.itemsize:
        raise DdctError(f"payload is {len(buf) - off} bytes, expected {n * dt.itemsize}")
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(dims).copy()


def write(path, arr, dtype=None) -> None:
    Path(path).write_bytes(encode(arr, dtype))


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())
