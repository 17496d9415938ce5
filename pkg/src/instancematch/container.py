"""Binary tensor container: the on-disk interchange format of the pipeline.

Layout (all integers little-endian, data row-major little-endian):

    magic   4 bytes  b"NIDS"
    version u32      1
    count   u32      number of records
    record  repeated count times:
        name_len u32
        name     name_len bytes, UTF-8
        dtype    u8   0 = float32, 1 = float64, 2 = uint8
        ndim     u32
        dims     ndim x u64
        data     prod(dims) * itemsize bytes

Record names must be unique. Reads are fully bounds-checked, so a file
truncated at any byte offset raises TruncatedFile instead of crashing, and
trailing bytes after the last record are rejected.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    BadMagic,
    ContainerError,
    DuplicateName,
    TruncatedFile,
    UnknownDtype,
)

MAGIC = b"NIDS"
VERSION = 1

_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODE_BY_KIND = {("f", 4): 0, ("f", 8): 1, ("u", 1): 2}


def _dtype_code(arr: np.ndarray) -> int:
    code = _CODE_BY_KIND.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise UnknownDtype(
            f"dtype {arr.dtype} is not storable (use float32, float64, or uint8)"
        )
    return code


def serialize_container(records: Mapping[str, np.ndarray]) -> bytes:
    """Encode named arrays into container bytes, preserving order."""
    if not records:
        raise ContainerError("a container needs at least one record")
    seen = set()
    parts = [MAGIC, struct.pack("<II", VERSION, len(records))]
    for name, arr in records.items():
        if name in seen:
            raise DuplicateName(f"duplicate record name {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        if arr.ndim and not arr.flags.c_contiguous:
            # ascontiguousarray would promote 0-d scalars to 1-d
            arr = np.ascontiguousarray(arr)
        code = _dtype_code(arr)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BI", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(parts)


class _Cursor:
    """Bounds-checked reader over a bytes buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedFile(
                f"needed {n} bytes at offset {self.pos}, file has "
                f"{len(self.data) - self.pos}"
            )
        out = self.data[self.pos : end]
        self.pos = end
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def parse_container(data: bytes) -> dict[str, np.ndarray]:
    """Decode container bytes into an ordered name -> array mapping."""
    cur = _Cursor(data)
    magic = cur.take(4)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    version = cur.u32()
    if version != VERSION:
        raise BadMagic(f"unsupported container version {version}")
    count = cur.u32()
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = cur.u32()
        try:
            name = cur.take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerError(f"record name is not valid UTF-8: {exc}") from None
        if name in records:
            raise DuplicateName(f"duplicate record name {name!r}")
        code = cur.u8()
        dtype = _DTYPE_BY_CODE.get(code)
        if dtype is None:
            raise UnknownDtype(f"unknown dtype code {code}")
        ndim = cur.u32()
        dims = struct.unpack(f"<{ndim}Q", cur.take(8 * ndim))
        nbytes = dtype.itemsize
        for d in dims:
            nbytes *= d
        raw = cur.take(nbytes)
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
        records[name] = arr.copy()  # decouple from the input buffer
    if cur.pos != len(data):
        raise ContainerError(
            f"{len(data) - cur.pos} trailing bytes after the last record"
        )
    return records


def write_container(path, records: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(serialize_container(records))


def read_container(path) -> dict[str, np.ndarray]:
    return parse_container(Path(path).read_bytes())
