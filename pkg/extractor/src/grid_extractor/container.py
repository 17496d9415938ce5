"""Writer/reader for the shared tensor-container format.

Implemented independently from the matching pipeline's codebase, against
the documented byte layout, so the two sides genuinely interoperate:

    magic "NIDS" | version u32=1 | count u32 | records...
    record: name_len u32 | name utf-8 | dtype u8 (0 f32, 1 f64, 2 u8)
            | ndim u32 | dims u64 x ndim | row-major data

All integers little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ContainerWriteError, ExtractorError

MAGIC = b"NIDS"
VERSION = 1
_CODES = {"float32": 0, "float64": 1, "uint8": 2}
_DTYPES = {0: "<f4", 1: "<f8", 2: "u1"}


def write(path, records: dict[str, np.ndarray]) -> None:
    if not records:
        raise ContainerWriteError("refusing to write an empty container")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(records))
    for name, arr in records.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.name)
        if code is None:
            raise ContainerWriteError(f"record {name!r} has unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<BI", code, arr.ndim)
        for d in arr.shape:
            out += struct.pack("<Q", d)
        out += np.ascontiguousarray(arr).tobytes() if arr.ndim else arr.tobytes()
    Path(path).write_bytes(bytes(out))


def read(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ExtractorError(f"container truncated at offset {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise ExtractorError("bad container magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise ExtractorError(f"unsupported container version {version}")
    records: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BI", take(5))
        if code not in _DTYPES:
            raise ExtractorError(f"unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dtype = np.dtype(_DTYPES[code])
        nbytes = dtype.itemsize
        for d in dims:
            nbytes *= d
        records[name] = np.frombuffer(take(nbytes), dtype=dtype).reshape(dims).copy()
    if pos != len(data):
        raise ExtractorError("trailing bytes after the last record")
    return records
