"""Writer for the flat binary tensor container consumed by the pipeline.

Byte layout (integers little-endian regardless of host order):

    bytes 0-3   magic b"VTK1"
    byte  4     dtype code: 0 = float32, 1 = uint8
    byte  5     ndim, 1..4
    bytes 6-7   reserved, zero
    next        ndim x uint32 dims
    rest        row-major payload, exactly prod(dims) * itemsize bytes

This module owns only the producing side; the consuming side lives in the
pipeline package and the two meet on bytes alone.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VTK1"
_CODE_FOR_KIND = {"float32": 0, "uint8": 1}
_NUMPY_FOR_CODE = {0: np.dtype("<f4"), 1: np.dtype("u1")}
MAX_NDIM = 4


class DecodeError(Exception):
    """An input frame could not be decoded."""


def tensor_bytes(array: np.ndarray) -> bytes:
    if array.dtype.name not in _CODE_FOR_KIND:
        raise ValueError(f"cannot serialize dtype {array.dtype.name}")
    if not (1 <= array.ndim <= MAX_NDIM):
        raise ValueError(f"ndim {array.ndim} outside 1..{MAX_NDIM}")
    if array.size == 0:
        raise ValueError("zero-sized tensor")
    code = _CODE_FOR_KIND[array.dtype.name]
    header = MAGIC + struct.pack("<BBH", code, array.ndim, 0)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_NUMPY_FOR_CODE[code]).tobytes()
    return header + dims + payload


def write_tensor_file(path: str | Path, array: np.ndarray) -> str:
    """Serialize the array and return the SHA-256 hex digest of the file."""
    blob = tensor_bytes(array)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_frame(path: str | Path) -> np.ndarray:
    """Decode an 8-bit grayscale P5 PGM frame to uint8 [H, W]."""
    p = Path(path)
    blob = p.read_bytes()
    if blob[:2] != b"P5":
        raise DecodeError(f"{p}: not an 8-bit P5 PGM frame")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and blob[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise DecodeError(f"{p}: malformed PGM header")
        fields.append(int(blob[start:pos]))
    pos += 1  # the single whitespace byte terminating the header
    width, height, maxval = fields
    if maxval != 255:
        raise DecodeError(f"{p}: PGM maxval {maxval}, only 255 supported")
    need = width * height
    if len(blob) - pos < need:
        raise DecodeError(f"{p}: pixel data has {len(blob) - pos} bytes, expected {need}")
    return np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos).reshape(height, width).copy()
