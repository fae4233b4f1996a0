"""Tests for the binary tensor container."""

import numpy as np
import pytest

from videoground.errors import InvalidInputError
from videoground.tensorio import read_tensors, write_tensors


def test_roundtrip_single_tensor(tmp_path):
    rng = np.random.default_rng(41)
    arr = rng.standard_normal((3, 4)).astype(np.float32)
    path = tmp_path / "one.bin"
    write_tensors(path, {"tokens": arr})
    loaded, header = read_tensors(path)
    assert set(loaded) == {"tokens"}
    assert loaded["tokens"].shape == (3, 4)
    assert np.allclose(loaded["tokens"], arr, atol=1e-7)
    entry = header["tensors"][0]
    assert entry["name"] == "tokens"
    assert entry["shape"] == [3, 4]


def test_roundtrip_multiple_tensors_with_meta(tmp_path):
    rng = np.random.default_rng(42)
    tensors = {
        "weights": rng.standard_normal((2, 3)),
        "bias": rng.standard_normal(3),
    }
    path = tmp_path / "many.bin"
    write_tensors(path, tensors, meta={"kind": "projector", "seed": 7})
    loaded, header = read_tensors(path)
    assert set(loaded) == {"weights", "bias"}
    for name in tensors:
        assert np.allclose(loaded[name], tensors[name], atol=1e-6)
    assert header["meta"] == {"kind": "projector", "seed": 7}


def test_float64_is_stored_as_float32(tmp_path):
    value = np.array([1.0 + 1e-12])
    path = tmp_path / "precision.bin"
    write_tensors(path, {"v": value})
    loaded, _ = read_tensors(path)
    assert loaded["v"][0] == 1.0


def test_layouts_recorded(tmp_path):
    path = tmp_path / "layout.bin"
    write_tensors(path, {"tokens": np.zeros((2, 2))},
                  layouts={"tokens": "temporal_first"})
    _, header = read_tensors(path)
    assert header["tensors"][0]["layout"] == "temporal_first"


def test_magic_prefix(tmp_path):
    path = tmp_path / "magic.bin"
    write_tensors(path, {"v": np.zeros(1)})
    assert path.read_bytes()[:4] == b"VGT1"


def test_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bogus.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(InvalidInputError):
        read_tensors(path)


def test_rejects_truncated_payload(tmp_path):
    path = tmp_path / "cut.bin"
    write_tensors(path, {"v": np.arange(8, dtype=np.float64)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(InvalidInputError):
        read_tensors(path)


def test_rejects_non_finite(tmp_path):
    path = tmp_path / "nan.bin"
    with pytest.raises(InvalidInputError):
        write_tensors(path, {"v": np.array([np.nan])})
