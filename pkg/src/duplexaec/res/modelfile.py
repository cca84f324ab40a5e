"""Binary model container.

Layout (all integers little-endian u32, all tensor data little-endian f32)::

    b"DFSM" | version | input_dim hidden_dim proj_dim stages
    layers_per_stage lookback_frames lookahead_frames bins
    then, for every tensor in ``param_shapes`` order followed by
    norm.mean and norm.std:
        name_len | name (utf-8) | ndim | dims... | data
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dfsmn import DfsmnConfig, DfsmnModel, norm_shapes, param_shapes

MAGIC = b"DFSM"
VERSION = 1
CONFIG_FIELDS = ("input_dim", "hidden_dim", "proj_dim", "stages", "layers_per_stage",
                 "lookback_frames", "lookahead_frames", "bins")


class ModelFileError(ValueError):
    pass


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedModelError(ModelFileError):
    pass


class NonFiniteWeightsError(ModelFileError):
    pass


class ShapeMismatchError(ModelFileError):
    pass


def model_to_bytes(model: DfsmnModel) -> bytes:
    c = model.config
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack(f"<{len(CONFIG_FIELDS)}I", *(getattr(c, f) for f in CONFIG_FIELDS))]
    for name, arr in model.tensors().items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_model(model: DfsmnModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedModelError(f"truncated model file while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def model_from_bytes(data: bytes) -> DfsmnModel:
    rd = _Reader(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic: expected {MAGIC!r}, found {data[:4]!r}")
    rd.pos = 4
    version = rd.u32("header version")
    if version != VERSION:
        raise VersionMismatchError(f"version mismatch: file has version {version}, reader supports {VERSION}")
    values = [rd.u32(f"config field {f}") for f in CONFIG_FIELDS]
    try:
        config = DfsmnConfig(**dict(zip(CONFIG_FIELDS, values)))
    except ValueError as exc:
        raise ShapeMismatchError(f"invalid config in model file: {exc}") from exc

    expected = {**param_shapes(config), **norm_shapes(config)}
    tensors = {}
    for want_name, want_shape in expected.items():
        name_len = rd.u32(f"name length of tensor {want_name}")
        name = rd.take(name_len, f"name of tensor {want_name}").decode("utf-8", errors="replace")
        if name != want_name:
            raise ShapeMismatchError(f"unexpected tensor {name!r}; expected {want_name!r}")
        ndim = rd.u32(f"rank of tensor {name}")
        dims = tuple(rd.u32(f"dims of tensor {name}") for _ in range(ndim))
        if dims != want_shape:
            raise ShapeMismatchError(f"tensor {name} has shape {dims}, config implies {want_shape}")
        n = int(np.prod(dims))
        raw = rd.take(4 * n, f"data of tensor {name}")
        arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(dims)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteWeightsError(f"non-finite (NaN/Inf) value in tensor {name}")
        tensors[name] = arr
    if rd.pos != len(data):
        raise ModelFileError(f"{len(data) - rd.pos} trailing bytes after last tensor")

    mean = tensors.pop("norm.mean")
    std = tensors.pop("norm.std")
    if not np.all(std > 0):
        raise ModelFileError("tensor norm.std has non-positive entries")
    return DfsmnModel(config, tensors, mean, std)


def load_model(path) -> DfsmnModel:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"model file not found: {p}")
    return model_from_bytes(p.read_bytes())
