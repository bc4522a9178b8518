"""CLMT binary tensor files.

Layout: ``b"CLMT"``, u8 version (1), u8 ndim, ndim x u32 LE extents, then the
row-major float32 LE payload.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CLMT"
VERSION = 1


class FormatError(ValueError):
    pass


def dumps(array) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = MAGIC + struct.pack("<BB", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def loads(blob: bytes) -> np.ndarray:
    if len(blob) < 6 or blob[:4] != MAGIC:
        raise FormatError("missing CLMT magic")
    version, ndim = struct.unpack_from("<BB", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported CLMT version {version}")
    offset = 6 + 4 * ndim
    if len(blob) < offset:
        raise FormatError("truncated header")
    shape = struct.unpack_from(f"<{ndim}I", blob, 6)
    count = int(np.prod(shape)) if ndim else 1
    payload = blob[offset:]
    if len(payload) != 4 * count:
        raise FormatError(f"payload holds {len(payload)} bytes, expected {4 * count}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def save(path, array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
