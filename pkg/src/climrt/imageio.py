"""Binary PPM (P6, 8-bit) images as (H, W, 3) float arrays in [0, 1]."""

from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def _tokens(blob: bytes, count: int):
    out, pos = [], 2
    while len(out) < count:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        out.append(blob[start:pos])
    return out, pos + 1


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM")
    (w, h, maxval), pos = _tokens(blob, 3)
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad header") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PPM supported")
    if len(blob) - pos < width * height * 3:
        raise ImageFormatError(f"{path}: truncated pixel data")
    data = np.frombuffer(blob, dtype=np.uint8, count=width * height * 3, offset=pos)
    return data.reshape(height, width, 3).astype(np.float32) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    arr = to_uint8(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError(f"expected (H, W, 3) image, got {arr.shape}")
    height, width = arr.shape[:2]
    Path(path).write_bytes(f"P6\n{width} {height}\n255\n".encode() + arr.tobytes())
