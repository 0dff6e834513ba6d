"""Binary tensor container (GTEN) and 8-bit PGM helpers.

GTEN layout, all little-endian::

    b"GTEN" | u8 version (=1) | u8 dtype (1 = f64) | u8 rank
    | rank x u32 extents | row-major f64 payload
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GTEN"
VERSION = 1
DTYPE_F64 = 1


class CorruptFileError(ValueError):
    """Raised when a container or image file cannot be decoded."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)


def encode_tensor(array) -> bytes:
    arr = np.asarray(array, dtype="<f8", order="C")
    if arr.ndim > 255:
        raise ValueError(f"rank {arr.ndim} exceeds 255")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F64, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def decode_tensor(buf: bytes, path="<bytes>") -> np.ndarray:
    if len(buf) < 7 or buf[:4] != MAGIC:
        raise CorruptFileError(path, "bad magic")
    version, dtype, rank = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise CorruptFileError(path, f"unsupported version {version}")
    if dtype != DTYPE_F64:
        raise CorruptFileError(path, f"unsupported dtype code {dtype}")
    off = 7 + 4 * rank
    if len(buf) < off:
        raise CorruptFileError(path, "truncated header")
    shape = struct.unpack_from(f"<{rank}I", buf, 7)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) != off + 8 * count:
        raise CorruptFileError(
            path, f"payload is {len(buf) - off} bytes, expected {8 * count}"
        )
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=off)
    return data.astype(np.float64).reshape(shape)


def save_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def load_tensor(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptFileError(path, exc.strerror or "unreadable") from exc
    return decode_tensor(buf, path)


def encode_pgm(image) -> bytes:
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {img.shape}")
    if img.min(initial=0) < 0 or img.max(initial=0) > 255:
        raise ValueError("PGM pixel values must lie in [0, 255]")
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.astype(np.uint8).tobytes()


def decode_pgm(buf: bytes, path="<bytes>") -> np.ndarray:
    # header tokens: magic, width, height, maxval; comments are not emitted by us
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptFileError(path, "truncated PGM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise CorruptFileError(path, "not a binary PGM (P5)")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise CorruptFileError(path, "malformed PGM header") from exc
    if maxval != 255:
        raise CorruptFileError(path, f"unsupported maxval {maxval}")
    pos += 1
    if len(buf) - pos != w * h:
        raise CorruptFileError(path, f"PGM payload is {len(buf) - pos} bytes, expected {w * h}")
    return np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(h, w).copy()


def save_pgm(path, image) -> None:
    Path(path).write_bytes(encode_pgm(image))


def load_pgm(path) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CorruptFileError(path, exc.strerror or "unreadable") from exc
    return decode_pgm(buf, path)


def unit_to_byte(values) -> np.ndarray:
    """Map [0, 1] values to 0..255, rounding half up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


CONFIDENCE_TO_BYTE = {-1: 128, 0: 0, 1: 255}


def confidence_to_byte(conf) -> np.ndarray:
    conf = np.asarray(conf)
    out = np.full(conf.shape, 128, dtype=np.uint8)
    out[conf == 0] = 0
    out[conf == 1] = 255
    return out


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
