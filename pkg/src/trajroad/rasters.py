"""Raster tiles on disk: the RFT1 float format and binary PGM masks.

A tile in memory is a float32 array of shape (H, W, C), row 0 at the north
edge.
"""
import struct

import numpy as np

from .errors import CorruptRaster

RFT_MAGIC = b"RFT1"


def as_tile(arr):
    """Coerce a 2-d or 3-d array into an (H, W, C) float32 tile."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise CorruptRaster(f"tile must be H x W x C, got shape {a.shape}")
    return a


def encode_rft(tile):
    t = as_tile(tile)
    h, w, c = t.shape
    return RFT_MAGIC + struct.pack("<III", h, w, c) + np.ascontiguousarray(t, dtype="<f4").tobytes()


def decode_rft(buf):
    if len(buf) < 16 or buf[:4] != RFT_MAGIC:
        raise CorruptRaster("missing RFT1 magic")
    h, w, c = struct.unpack("<III", buf[4:16])
    n = h * w * c
    if len(buf) != 16 + 4 * n:
        raise CorruptRaster(f"expected {n} values, file holds {(len(buf) - 16) // 4}")
    return np.frombuffer(buf, dtype="<f4", offset=16).astype(np.float32).reshape(h, w, c)


def write_rft(tile, path):
    with open(path, "wb") as fh:
        fh.write(encode_rft(tile))


def read_rft(path):
    with open(path, "rb") as fh:
        return decode_rft(fh.read())


def encode_pgm(mask):
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[:, :, 0]
    h, w = m.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.where(m > 0, 255, 0).astype(np.uint8).tobytes()


def decode_pgm(buf):
    """Binary PGM (P5, maxval 255) to a 0/1 uint8 mask."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptRaster("truncated PGM header")
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P5" or tokens[3] != b"255":
        raise CorruptRaster("only P5 with maxval 255 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    body = buf[pos:pos + w * h]
    if len(body) != w * h:
        raise CorruptRaster("truncated PGM body")
    return (np.frombuffer(body, dtype=np.uint8).reshape(h, w) > 127).astype(np.uint8)


def write_pgm(mask, path):
    with open(path, "wb") as fh:
        fh.write(encode_pgm(mask))


def read_pgm(path):
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())
