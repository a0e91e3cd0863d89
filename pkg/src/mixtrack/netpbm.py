"""Binary netpbm I/O: P6 (PPM) for images, P5 (PGM) for gray maps."""

from __future__ import annotations

import numpy as np

from .tensor import UsageError


def _read_header(data: bytes, magic: bytes):
    if not data.startswith(magic):
        raise UsageError(f"not a {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1  # width, height, maxval, payload offset


def write_ppm(path, image) -> None:
    """image: (3, H, W) uint8, or floats in [0, 1]."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise UsageError("write_ppm expects a (3, H, W) image")
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    _, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(arr.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    """Returns (3, H, W) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    w, h, maxval, off = _read_header(data, b"P6")
    if maxval != 255:
        raise UsageError("only maxval 255 is supported")
    count = w * h * 3
    pixels = np.frombuffer(data[off : off + count], dtype=np.uint8)
    if pixels.size != count:
        raise UsageError(f"{path} is truncated")
    return pixels.reshape(h, w, 3).transpose(2, 0, 1).copy()


def write_pgm(path, image, normalize: bool = True) -> None:
    """image: (H, W) floats; normalized by its max (or clipped) to 8 bits."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise UsageError("write_pgm expects a (H, W) map")
    if normalize:
        peak = arr.max()
        arr = arr / peak if peak > 0 else arr
    arr = (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Returns (H, W) uint8."""
    with open(path, "rb") as fh:
        data = fh.read()
    w, h, maxval, off = _read_header(data, b"P5")
    if maxval != 255:
        raise UsageError("only maxval 255 is supported")
    pixels = np.frombuffer(data[off : off + w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise UsageError(f"{path} is truncated")
    return pixels.reshape(h, w).copy()
