import struct
from dataclasses import dataclass

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from online_registers import io
from online_registers.training import ModelConfig, PretrainingModel, TrainConfig


@given(arrays(np.float32, st.tuples(st.integers(0, 6), st.integers(0, 6)), elements=st.floats(-1e6, 1e6, width=32)))
def test_matrix_roundtrip(tmp_path_factory, m):
    path = tmp_path_factory.mktemp("m") / "x.f32"
    io.write_matrix(path, m)
    np.testing.assert_array_equal(io.read_matrix(path), m.astype(np.float64))


def test_matrix_header_layout(tmp_path):
    path = tmp_path / "x.bin"
    io.write_matrix(path, np.array([[1.0, 2.0, 3.0]]))
    raw = path.read_bytes()
    assert raw[:8] == b"ORMATF32" and struct.unpack("<II", raw[8:16]) == (1, 3)
    assert len(raw) == 16 + 12
    assert np.frombuffer(raw[16:], "<f4").tolist() == [1.0, 2.0, 3.0]


def test_matrix_csv(tmp_path):
    m = np.array([[1.5, -2.0], [0.25, 3.0]])
    io.write_matrix(tmp_path / "x.csv", m)
    np.testing.assert_array_equal(io.read_matrix(tmp_path / "x.csv"), m)
    (tmp_path / "row.csv").write_text("1,2,3\n")
    assert io.read_matrix(tmp_path / "row.csv").shape == (1, 3)


def test_matrix_errors(tmp_path):
    (tmp_path / "bad.f32").write_bytes(b"NOTMAGIC" + bytes(8))
    with pytest.raises(io.FormatError):
        io.read_matrix(tmp_path / "bad.f32")
    (tmp_path / "short.f32").write_bytes(b"ORMATF32" + struct.pack("<II", 2, 2) + bytes(4))
    with pytest.raises(io.FormatError):
        io.read_matrix(tmp_path / "short.f32")
    with pytest.raises(ValueError):
        io.write_matrix(tmp_path / "x.f32", np.zeros(3))


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b.c": np.array(2.5), "empty": np.zeros((0, 4))}
    io.save_arrays(tmp_path / "ck", arrays)
    back = io.load_arrays(tmp_path / "ck")
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].shape == arrays[k].shape
        np.testing.assert_array_equal(back[k], arrays[k])
    assert back["a"].dtype == np.float32 and back["b.c"].dtype == np.float64


def test_checkpoint_errors(tmp_path):
    (tmp_path / "x").write_bytes(b"garbage!")
    with pytest.raises(io.FormatError):
        io.load_arrays(tmp_path / "x")
    io.save_arrays(tmp_path / "y", {"a": np.ones(2)})
    (tmp_path / "y").write_bytes((tmp_path / "y").read_bytes() + b"\0")
    with pytest.raises(io.FormatError):
        io.load_arrays(tmp_path / "y")


def test_module_roundtrip_includes_codebook(tmp_path):
    a = PretrainingModel(ModelConfig(d_model=8, n_heads=2, seed=1))
    b = PretrainingModel(ModelConfig(d_model=8, n_heads=2, seed=2))
    io.save_module(tmp_path / "m", a)
    assert "quantizer.codebook" in io.load_arrays(tmp_path / "m")
    io.load_module(tmp_path / "m", b)
    for (k, v), (_, w) in zip(a.state_dict().items(), b.state_dict().items()):
        assert torch.equal(v, w), k


def test_module_missing_keys(tmp_path):
    io.save_arrays(tmp_path / "m", {"x": np.ones(1)})
    with pytest.raises(io.FormatError):
        io.load_module(tmp_path / "m", torch.nn.Linear(2, 2))


def test_parse_kv():
    text = "# comment\n a = 1 \n\nb=two # trailing\nc = x=y\n"
    assert io.parse_kv(text) == {"a": "1", "b": "two", "c": "x=y"}
    with pytest.raises(io.FormatError):
        io.parse_kv("novalue\n")


@dataclass
class Demo:
    n: int = 1
    f: float = 0.5
    flag: bool = False
    name: str = "x"
    pair: tuple = (1.0, 2.0)


def test_dataclass_kv_roundtrip():
    d = Demo(n=3, f=1e-3, flag=True, name="abc", pair=(0.9, 0.98))
    assert io.dataclass_from_kv(Demo, io.parse_kv(io.dataclass_to_kv(d))) == d


def test_dataclass_kv_errors():
    with pytest.raises(io.FormatError):
        io.dataclass_from_kv(Demo, {"zzz": "1"})
    assert io.dataclass_from_kv(Demo, {"zzz": "1"}, strict=False) == Demo()
    with pytest.raises(io.FormatError):
        io.dataclass_from_kv(Demo, {"flag": "maybe"})
    with pytest.raises(ValueError):
        io.dataclass_from_kv(Demo, {"n": "1.5"})


@pytest.mark.parametrize("cls", [ModelConfig, TrainConfig])
def test_real_configs_roundtrip(cls):
    c = cls()
    assert io.dataclass_from_kv(cls, io.parse_kv(io.dataclass_to_kv(c))) == c
