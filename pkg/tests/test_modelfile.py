import struct

import numpy as np
import pytest

from duplexaec.res import (BadMagicError, DfsmnConfig, ModelFileError, NonFiniteWeightsError,
                           ShapeMismatchError, TruncatedModelError, VersionMismatchError, init_model,
                           load_model, save_model)
from duplexaec.res.modelfile import model_from_bytes, model_to_bytes

CFG = DfsmnConfig(input_dim=30, hidden_dim=7, proj_dim=5, stages=2, layers_per_stage=2,
                  lookback_frames=4, bins=10)


@pytest.fixture
def model():
    m = init_model(CFG, 11)
    return type(m)(CFG, dict(m.params), np.linspace(-1, 1, 30).astype(np.float32),
                   np.linspace(0.5, 2, 30).astype(np.float32))


def test_round_trip_bit_exact(tmp_path, model):
    path = tmp_path / "m.bin"
    save_model(model, path)
    back = load_model(path)
    assert back.config == CFG
    for name, arr in model.tensors().items():
        got = back.tensors()[name]
        assert got.dtype == np.float32
        assert got.tobytes() == arr.tobytes(), name


def test_default_config_round_trip(tmp_path):
    m = init_model(DfsmnConfig(), 0)
    save_model(m, tmp_path / "d.bin")
    back = load_model(tmp_path / "d.bin")
    assert all(np.array_equal(back.params[k], v) for k, v in m.params.items())


def test_header_layout(model):
    raw = model_to_bytes(model)
    assert raw[:4] == b"DFSM"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    assert struct.unpack("<8I", raw[8:40]) == (30, 7, 5, 2, 2, 4, 0, 10)
    name_len = struct.unpack("<I", raw[40:44])[0]
    assert raw[44:44 + name_len] == b"input.weight"


def test_bad_magic(model):
    raw = bytearray(model_to_bytes(model))
    raw[:4] = b"XXXX"
    with pytest.raises(BadMagicError, match="bad magic"):
        model_from_bytes(bytes(raw))


def test_version_mismatch(model):
    raw = bytearray(model_to_bytes(model))
    raw[4:8] = struct.pack("<I", 2)
    with pytest.raises(VersionMismatchError, match="version"):
        model_from_bytes(bytes(raw))


def test_truncated_names_tensor(model):
    raw = model_to_bytes(model)
    cut = raw.index(b"layer1.v") + 40  # inside layer1.v's header/data
    with pytest.raises(TruncatedModelError, match="layer1.v"):
        model_from_bytes(raw[:cut])


def test_nan_weights(model):
    raw = bytearray(model_to_bytes(model))
    pos = raw.index(b"head0.bias") + len(b"head0.bias") + 8  # rank + one dim
    raw[pos:pos + 4] = struct.pack("<f", float("nan"))
    with pytest.raises(NonFiniteWeightsError, match="head0.bias"):
        model_from_bytes(bytes(raw))


def test_corruptions_are_distinct(model):
    raw = model_to_bytes(model)
    errors = []
    for corrupt in (b"NOPE" + raw[4:], raw[:len(raw) // 2]):
        with pytest.raises(ModelFileError) as info:
            model_from_bytes(corrupt)
        errors.append(info.value)
    bad = bytearray(raw)
    bad[-4:] = struct.pack("<f", float("inf"))
    with pytest.raises(ModelFileError) as info:
        model_from_bytes(bytes(bad))
    errors.append(info.value)
    assert len({type(e) for e in errors}) == 3
    assert len({str(e).split(":")[0] for e in errors}) == 3


def test_shape_mismatch(model):
    raw = bytearray(model_to_bytes(model))
    pos = raw.index(b"input.bias") + len(b"input.bias") + 4
    raw[pos:pos + 4] = struct.pack("<I", 6)
    with pytest.raises(ShapeMismatchError):
        model_from_bytes(bytes(raw))


def test_trailing_bytes(model):
    with pytest.raises(ModelFileError, match="trailing"):
        model_from_bytes(model_to_bytes(model) + b"\0")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "nope.bin")
