"""Flat binary tensor container plus 8-bit PGM/PPM frame I/O.

File layout (all integers little-endian, independent of host byte order):

    bytes 0-3   magic b"VTK1"
    byte  4     dtype code: 0 = float32, 1 = uint8
    byte  5     ndim, 1..4
    bytes 6-7   reserved, must be zero
    next        ndim x uint32 dims
    rest        row-major payload, exactly prod(dims) * itemsize bytes

Read errors are typed and carry the byte offset at which parsing failed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VTK1"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_FOR_KIND = {"float32": 0, "uint8": 1}
MAX_NDIM = 4


class TensorFileError(Exception):
    """Base class for tensor container I/O failures."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class MalformedHeaderError(TensorFileError):
    pass


class TruncatedPayloadError(TensorFileError):
    pass


class UnsupportedDtypeError(TensorFileError):
    pass


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Serialize a float32 or uint8 array of 1..4 dims."""
    if array.dtype.name not in _CODE_FOR_KIND:
        raise UnsupportedDtypeError(f"cannot serialize dtype {array.dtype.name}")
    if not (1 <= array.ndim <= MAX_NDIM):
        raise MalformedHeaderError(f"ndim {array.ndim} outside 1..{MAX_NDIM}")
    if array.size == 0:
        raise MalformedHeaderError("zero-sized tensor")
    code = _CODE_FOR_KIND[array.dtype.name]
    header = MAGIC + struct.pack("<BBH", code, array.ndim, 0)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPE_CODES[code]).tobytes()
    Path(path).write_bytes(header + dims + payload)


def read_tensor(path: str | Path) -> np.ndarray:
    """Parse a tensor container, raising a typed error with byte offset."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise MalformedHeaderError(f"file too short for header ({len(blob)} bytes)", offset=len(blob))
    if blob[:4] != MAGIC:
        raise MalformedHeaderError(f"bad magic {blob[:4]!r}", offset=0)
    code, ndim, reserved = struct.unpack_from("<BBH", blob, 4)
    if code not in _DTYPE_CODES:
        raise UnsupportedDtypeError(f"unknown dtype code {code}", offset=4)
    if not (1 <= ndim <= MAX_NDIM):
        raise MalformedHeaderError(f"ndim {ndim} outside 1..{MAX_NDIM}", offset=5)
    if reserved != 0:
        raise MalformedHeaderError(f"reserved bytes nonzero ({reserved})", offset=6)
    dims_end = 8 + 4 * ndim
    if len(blob) < dims_end:
        raise MalformedHeaderError("header truncated in dims", offset=len(blob))
    dims = struct.unpack_from(f"<{ndim}I", blob, 8)
    for i, d in enumerate(dims):
        if d == 0:
            raise MalformedHeaderError(f"dim {i} is zero", offset=8 + 4 * i)
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    actual = len(blob) - dims_end
    if actual < expected:
        raise TruncatedPayloadError(
            f"payload has {actual} bytes, expected {expected}", offset=len(blob)
        )
    if actual > expected:
        raise TruncatedPayloadError(
            f"payload oversized: {actual} bytes, expected {expected}", offset=dims_end + expected
        )
    flat = np.frombuffer(blob, dtype=dtype, count=int(np.prod(dims)), offset=dims_end)
    return flat.reshape(dims).copy()


def _read_pgm_header(blob: bytes, path: str) -> tuple[int, int, int, int]:
    # P5 header: magic, whitespace/comment separated width height maxval
    if blob[:2] != b"P5":
        raise MalformedHeaderError(f"{path}: not a P5 PGM", offset=0)
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
            raise MalformedHeaderError(f"{path}: bad PGM header", offset=pos)
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedDtypeError(f"{path}: PGM maxval {maxval}, only 255 supported", offset=pos)
    return width, height, maxval, pos


def read_pgm(path: str | Path) -> np.ndarray:
    """8-bit P5 PGM -> uint8 [H, W]."""
    blob = Path(path).read_bytes()
    width, height, _, pos = _read_pgm_header(blob, str(path))
    need = width * height
    if len(blob) - pos < need:
        raise TruncatedPayloadError(
            f"{path}: pixel data has {len(blob) - pos} bytes, expected {need}", offset=len(blob)
        )
    return np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos).reshape(height, width).copy()


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("write_pgm expects a uint8 [H, W] array")
    h, w = image.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + image.tobytes())


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ValueError("write_ppm expects a uint8 [H, W, 3] array")
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


def load_frame_gray(path: str | Path) -> np.ndarray:
    """Load a grayscale frame as float32 in [0, 1].

    Accepts 8-bit P5 PGM or a tensor container holding uint8/float32 [H, W];
    8-bit inputs are scaled by 1/255, float inputs pass through.
    """
    p = Path(path)
    head = p.read_bytes()[:4] if p.exists() else b""
    if head[:2] == b"P5":
        return read_pgm(p).astype(np.float32) / np.float32(255.0)
    arr = read_tensor(p)
    if arr.ndim != 2:
        raise MalformedHeaderError(f"{path}: frame tensor must be 2-D, got {arr.ndim}-D", offset=5)
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / np.float32(255.0)
    return arr.astype(np.float32)
