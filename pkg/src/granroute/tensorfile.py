"""Shared on-disk tensor record: one JSON header line, then raw little-endian data.

    {"shape": [24, 24, 16], "dtype": "f32"}\\n<payload>
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import CorruptManifest

DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8"), "i64": np.dtype("<i8")}
_CODES = {np.dtype(v).newbyteorder("="): k for k, v in DTYPES.items()}


def dtype_code(arr: np.ndarray) -> str:
    try:
        return _CODES[arr.dtype.newbyteorder("=")]
    except KeyError:
        raise TypeError(f"unsupported dtype {arr.dtype}") from None


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    code = dtype_code(arr)
    header = json.dumps({"shape": list(arr.shape), "dtype": code}, separators=(",", ":"))
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes(order="C")
    return header.encode("utf-8") + b"\n" + payload


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> int:
    blob = encode_tensor(arr)
    fh.write(blob)
    return len(blob)


def read_tensor(fh: BinaryIO) -> np.ndarray:
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise CorruptManifest("tensor header truncated")
    try:
        header = json.loads(line.decode("utf-8"))
        shape = tuple(int(n) for n in header["shape"])
        dt = DTYPES[header["dtype"]]
    except (ValueError, KeyError) as exc:
        raise CorruptManifest(f"bad tensor header {line[:80]!r}") from exc
    count = int(np.prod(shape, dtype=np.int64))
    raw = fh.read(count * dt.itemsize)
    if len(raw) != count * dt.itemsize:
        raise CorruptManifest("tensor payload truncated")
    return np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
