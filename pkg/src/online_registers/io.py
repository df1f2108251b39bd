"""File formats: matrices, checkpoints and key=value config files.

Matrix file (``.f32``/any non-``.csv`` suffix), little-endian::

    bytes 0-7    magic  b"ORMATF32"
    bytes 8-11   rows   uint32
    bytes 12-15  cols   uint32
    then rows*cols float32 values, row-major

Checkpoint file, little-endian::

    magic b"ORCKPT01", uint32 array count, then per array:
        uint16 name length, name (utf-8), uint8 dtype code (0=float32, 1=float64),
        uint8 ndim, ndim x uint32 dims, raw row-major data

Config files are plain text, one ``key = value`` per line; ``#`` starts a comment.
"""
from __future__ import annotations

import dataclasses
import struct
import typing
from pathlib import Path
from typing import Any

import numpy as np
import torch

MATRIX_MAGIC = b"ORMATF32"
CKPT_MAGIC = b"ORCKPT01"
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class FormatError(ValueError):
    pass


def write_matrix(path, matrix) -> None:
    path = Path(path)
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    if path.suffix == ".csv":
        np.savetxt(path, m, delimiter=",", fmt="%.9g")
        return
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + struct.pack("<II", *m.shape))
        fh.write(m.astype("<f4").tobytes())


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
    data = path.read_bytes()
    if len(data) < 16 or data[:8] != MATRIX_MAGIC:
        raise FormatError(f"{path}: not a matrix file (bad magic)")
    rows, cols = struct.unpack("<II", data[8:16])
    body = data[16:]
    if len(body) != rows * cols * 4:
        raise FormatError(f"{path}: expected {rows * cols * 4} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            a = np.asarray(arr)
            if a.dtype not in (np.float32, np.float64):
                a = a.astype(np.float64)
            a = a.astype(a.dtype.newbyteorder("<"))
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<BB", _DTYPE_CODES[a.dtype], a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_arrays(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (count,) = struct.unpack_from("<I", data, 8)
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = _CODE_DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(data[pos : pos + size], dtype=dtype).reshape(shape).copy()
        pos += size
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def save_module(path, module: torch.nn.Module) -> None:
    save_arrays(path, {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()})


def load_module(path, module: torch.nn.Module) -> torch.nn.Module:
    arrays = load_arrays(path)
    state = module.state_dict()
    missing = set(state) - set(arrays)
    if missing:
        raise FormatError(f"checkpoint lacks {sorted(missing)}")
    module.load_state_dict({k: torch.from_numpy(arrays[k]).to(state[k].dtype) for k in state})
    return module


# -- key = value configs ----------------------------------------------------


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(value: str, tp) -> Any:
    if tp is bool:
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise FormatError(f"not a boolean: {value!r}")
    if tp is int:
        return int(value)
    if tp is float:
        return float(value)
    if tp is tuple:
        return tuple(float(v) for v in value.replace(",", " ").split())
    return value


def dataclass_from_kv(cls, values: dict[str, str], strict: bool = True):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown and strict:
        raise FormatError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: _coerce(v, hints[k]) for k, v in values.items() if k in known}
    return cls(**kwargs)


def dataclass_to_kv(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = " ".join(repr(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
