"""Raster file formats: binary PGM images and the float32 depth raster.

Depth raster layout (little endian)::

    bytes 0-3   magic b"EBDR"
    bytes 4-7   uint32 width
    bytes 8-11  uint32 height
    then width*height float32 values, row-major

Invalid depth (no floor intersection) is stored as 0.
"""
import re
import struct

import numpy as np

from .errors import DataError

DEPTH_MAGIC = b"EBDR"

_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def encode_pgm(img):
    img = np.asarray(img, dtype=np.float64)
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def decode_pgm(data):
    m = _PGM_HEADER.match(data)
    if m is None:
        raise DataError("not a binary PGM (P5) file")
    w, h, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise DataError(f"bad PGM maxval {maxval}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    body = data[m.end():]
    n = w * h
    if len(body) < n * dtype.itemsize:
        raise DataError("truncated PGM pixel data")
    raw = np.frombuffer(body, dtype=dtype, count=n).reshape(h, w)
    return raw.astype(np.float64) / maxval


def write_pgm(path, img):
    with open(path, "wb") as f:
        f.write(encode_pgm(img))


def read_pgm(path):
    with open(path, "rb") as f:
        return decode_pgm(f.read())


def encode_depth(depth):
    d = np.asarray(depth, dtype="<f4")
    h, w = d.shape
    return DEPTH_MAGIC + struct.pack("<II", w, h) + d.tobytes()


def decode_depth(data):
    if len(data) < 12 or data[:4] != DEPTH_MAGIC:
        raise DataError("not a depth raster (bad magic)")
    w, h = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * w * h:
        raise DataError("depth raster size does not match header")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)


def write_depth(path, depth):
    with open(path, "wb") as f:
        f.write(encode_depth(depth))


def read_depth(path):
    with open(path, "rb") as f:
        return decode_depth(f.read())
