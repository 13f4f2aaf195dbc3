"""CKP1 checkpoints: named float32 parameter arrays, little-endian."""
import struct

import numpy as np

from ..errors import CorruptCheckpoint, ShapeMismatch
from ..tensor.core import Tensor
from ..tensor.nn import Parameter, ParamSet
from .model import param_specs

MAGIC = b"CKP1"


def encode_checkpoint(params):
    parts = [MAGIC, struct.pack("<I", len(params))]
    for p in params.parameters():
        name = p.name.encode("utf-8")
        shape = p.tensor.shape
        parts.append(struct.pack("<H", len(name)) + name)
        parts.append(struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}I", *shape))
        parts.append(np.ascontiguousarray(p.tensor.data, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(buf):
    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CorruptCheckpoint("truncated checkpoint")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    if take(4) != MAGIC:
        raise CorruptCheckpoint("bad magic")
    (count,) = struct.unpack("<I", take(4))
    params = ParamSet()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptCheckpoint("bad parameter name") from exc
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
        try:
            params.add(Parameter(name, Tensor(values, dtype=np.float32)))
        except KeyError as exc:
            raise CorruptCheckpoint(str(exc)) from exc
    if pos != len(buf):
        raise CorruptCheckpoint("trailing bytes after last parameter")
    return params


def check_against_config(params, config):
    expected = dict(param_specs(config))
    if set(expected) != set(params.names()):
        missing = sorted(set(expected) - set(params.names()))
        extra = sorted(set(params.names()) - set(expected))
        raise ShapeMismatch(f"checkpoint/config parameter sets differ (missing {missing[:3]}, extra {extra[:3]})")
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise ShapeMismatch(f"{name}: checkpoint {params[name].shape} vs config {shape}")


def save_checkpoint(params, path):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params))


def load_checkpoint(path, config=None):
    with open(path, "rb") as fh:
        params = decode_checkpoint(fh.read())
    if config is not None:
        check_against_config(params, config)
    return params
