"""Binary netpbm image I/O: P6 (color) and P5 (grayscale), 8-bit.

Strict parsing with byte positions in error messages; writes are
bit-exact round trips, which keeps dataset replay checks meaningful.
"""
from __future__ import annotations

import numpy as np


class NetpbmError(ValueError):
    pass


def _read_token(data: bytes, pos: int, path: str) -> tuple[bytes, int]:
    """Next whitespace-delimited token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < n and data[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise NetpbmError(f"{path}: unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def _read(path: str, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != magic:
        raise NetpbmError(f"{path}: bad magic {data[:2]!r} at byte 0, expected {magic!r}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _read_token(data, pos, path)
        if not tok.isdigit():
            raise NetpbmError(f"{path}: non-numeric header token {tok!r} near byte {pos}")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise NetpbmError(f"{path}: only maxval 255 supported, got {maxval}")
    if width < 1 or height < 1:
        raise NetpbmError(f"{path}: bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise NetpbmError(f"{path}: truncated raster, wanted {expected} bytes "
                          f"from byte {pos}, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def read_ppm(path: str) -> np.ndarray:
    """Read a binary P6 file into an (h, w, 3) uint8 array."""
    return _read(path, b"P6", 3)


def read_pgm(path: str) -> np.ndarray:
    """Read a binary P5 file into an (h, w) uint8 array."""
    return _read(path, b"P5", 1)


def _write(path: str, magic: bytes, arr: np.ndarray) -> None:
    if arr.dtype != np.uint8:
        raise NetpbmError(f"image array must be uint8, got {arr.dtype}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n" + f"{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(arr).tobytes())


def write_ppm(path: str, arr: np.ndarray) -> None:
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise NetpbmError(f"P6 needs an (h,w,3) array, got shape {arr.shape}")
    _write(path, b"P6", arr)


def write_pgm(path: str, arr: np.ndarray) -> None:
    if arr.ndim != 2:
        raise NetpbmError(f"P5 needs an (h,w) array, got shape {arr.shape}")
    _write(path, b"P5", arr)
