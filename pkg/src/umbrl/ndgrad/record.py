"""Versioned binary record for named parameter groups.

Layout (all integers little-endian)::

    magic        8 bytes  b"NDGRADPR"
    version      u32
    meta_len     u32, then meta_len bytes of UTF-8 JSON
    n_groups     u32
    per group:   u16 name_len, name, u32 n_tensors
      per tensor: u16 name_len, name, u8 ndim, ndim x u32 dims,
                  prod(dims) x float64 (little-endian)
"""

from __future__ import annotations

import io
import json
import os
import struct
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"NDGRADPR"
FORMAT_VERSION = 1


class RecordFormatError(ValueError):
    pass


def _write_name(buf: BinaryIO, name: str) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def dumps(groups: Mapping[str, Mapping[str, np.ndarray]], meta: Mapping | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    meta_raw = json.dumps(dict(meta or {}), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_raw)))
    buf.write(meta_raw)
    buf.write(struct.pack("<I", len(groups)))
    for gname, tensors in groups.items():
        _write_name(buf, gname)
        buf.write(struct.pack("<I", len(tensors)))
        for tname, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f8")
            _write_name(buf, tname)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr).tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise RecordFormatError("truncated parameter record")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def loads(raw: bytes) -> tuple[dict[str, dict[str, np.ndarray]], dict]:
    r = _Reader(raw)
    if r.take(len(MAGIC)) != MAGIC:
        raise RecordFormatError("not a parameter record (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise RecordFormatError(f"unsupported record format version {version}")
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (n_groups,) = r.unpack("<I")
    groups: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(n_groups):
        gname = r.name()
        (n_tensors,) = r.unpack("<I")
        tensors = {}
        for _ in range(n_tensors):
            tname = r.name()
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I") if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
            tensors[tname] = data.reshape(shape)
        groups[gname] = tensors
    if r.pos != len(raw):
        raise RecordFormatError("trailing bytes after parameter record")
    return groups, meta


def save(path: str | os.PathLike, groups, meta=None) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(dumps(groups, meta))
    os.replace(tmp, path)


def load(path: str | os.PathLike):
    with open(path, "rb") as fh:
        return loads(fh.read())
