"""``OMT1`` tensor files.

Layout (little-endian)::

    b"OMT1" | u8 dtype code | u8 ndim | u32 dims[ndim] | raw payload

The payload is written in logical row-major order. Dtype codes: 0 = f32,
1 = i8, 2 = i32.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"OMT1"
DTYPE_CODES = {"f32": 0, "i8": 1, "i32": 2}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}
_NP = {"f32": "<f4", "i8": "i1", "i32": "<i4"}


def dumps_tensor(arr, dtype: str) -> bytes:
    arr = np.asarray(arr)
    # check before ascontiguousarray, which promotes 0-d input to 1-d
    if arr.ndim == 0 or arr.ndim > 255:
        raise ValueError("tensor rank must be in 1..255")
    arr = np.ascontiguousarray(arr, dtype=_NP[dtype])
    head = MAGIC + struct.pack("<BB", DTYPE_CODES[dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def loads_tensor(data: bytes) -> tuple[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise FormatError("bad tensor magic", offset=0)
    if len(data) < 6:
        raise FormatError("truncated tensor header", offset=len(data))
    code, ndim = struct.unpack_from("<BB", data, 4)
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=4)
    if ndim == 0:
        raise FormatError("tensor rank must be >= 1", offset=5)
    if len(data) < 6 + 4 * ndim:
        raise FormatError("truncated tensor dims", offset=len(data))
    dims = struct.unpack_from(f"<{ndim}I", data, 6)
    dtype = CODE_DTYPES[code]
    start = 6 + 4 * ndim
    count = int(np.prod(dims))
    nbytes = count * np.dtype(_NP[dtype]).itemsize
    if len(data) != start + nbytes:
        raise FormatError(f"payload holds {len(data) - start} bytes, expected {nbytes}",
                          offset=start)
    arr = np.frombuffer(data, dtype=_NP[dtype], count=count, offset=start).reshape(dims)
    return dtype, arr.astype(arr.dtype.newbyteorder("="))


def write_tensor(path, arr, dtype: str) -> None:
    with open(path, "wb") as f:
        f.write(dumps_tensor(arr, dtype))


def read_tensor(path) -> tuple[str, np.ndarray]:
    with open(path, "rb") as f:
        return loads_tensor(f.read())
