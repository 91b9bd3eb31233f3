"""Flat binary container for named float64 arrays plus a JSON metadata record.

Byte layout (all integers little-endian)::

    magic      8 bytes   b"PAHRCKPT"
    version    u32       currently 1
    meta_len   u32       length of the metadata blob
    meta       meta_len  UTF-8 JSON, keys sorted, compact separators
    count      u32       number of array records
    records    count x:
        name_len  u16
        name      name_len bytes, UTF-8
        ndim      u8
        dims      ndim x u64
        payload   prod(dims) x float64, little-endian, row-major

Records are written in the order given; writing the result of a read
reproduces the file byte for byte.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"PAHRCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    buf = io.BytesIO()
    meta_blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(meta_blob)))
    buf.write(meta_blob)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def _read(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    f = io.BytesIO(data)
    if _read(f, 8) != MAGIC:
        raise CheckpointError("bad magic, not a parameter checkpoint")
    version, meta_len = struct.unpack("<II", _read(f, 8))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(_read(f, meta_len).decode())
    (count,) = struct.unpack("<I", _read(f, 4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read(f, 2))
        name = _read(f, name_len).decode()
        (ndim,) = struct.unpack("<B", _read(f, 1))
        shape = struct.unpack(f"<{ndim}Q", _read(f, 8 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(_read(f, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if f.read(1):
        raise CheckpointError("trailing bytes after last record")
    return arrays, meta


def save(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
