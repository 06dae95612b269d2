"""Binary container for named float64 matrices plus a JSON metadata blob.

Layout (all integers little-endian):

    bytes 0-3   magic "SEMC"
    bytes 4-7   uint32 version = 1
    bytes 8-11  uint32 record count
    per record:
        uint32  name length, then that many UTF-8 bytes
        uint8   payload kind: 0 = float64 matrix, 1 = UTF-8 JSON blob
        matrix: uint64 rows, uint64 cols, rows*cols float64 values (row-major)
        blob:   uint64 byte length, then the bytes

Matrices are stored as raw float64, so save/load round-trips are
bit-exact. Used for serializing fitted teachers and trained aligners.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SEMC"
VERSION = 1

_KIND_MATRIX = 0
_KIND_JSON = 1


def write_container(path, matrices: dict[str, np.ndarray], meta: dict) -> Path:
    """Write named matrices and a metadata dict to `path`."""
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(matrices) + 1)]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(_pack_name("__meta__"))
    parts.append(struct.pack("<B", _KIND_JSON))
    parts.append(struct.pack("<Q", len(meta_bytes)))
    parts.append(meta_bytes)
    for name in sorted(matrices):
        m = np.ascontiguousarray(matrices[name], dtype=np.float64)
        if m.ndim == 1:
            m = m.reshape(1, -1)
        if m.ndim != 2:
            raise FormatError(f"record {name!r} must be 1-D or 2-D, got ndim={m.ndim}")
        parts.append(_pack_name(name))
        parts.append(struct.pack("<B", _KIND_MATRIX))
        parts.append(struct.pack("<QQ", m.shape[0], m.shape[1]))
        parts.append(m.astype("<f8").tobytes(order="C"))
    path.write_bytes(b"".join(parts))
    return path


def read_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (matrices, meta) written by `write_container`."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError(f"{path}: container shorter than its fixed header")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    (count,) = struct.unpack_from("<I", raw, 8)
    offset = 12
    matrices: dict[str, np.ndarray] = {}
    meta: dict = {}
    for _ in range(count):
        name, offset = _unpack_name(raw, offset, path)
        if offset + 1 > len(raw):
            raise FormatError(f"{path}: truncated record {name!r}")
        kind = raw[offset]
        offset += 1
        if kind == _KIND_JSON:
            (length,) = struct.unpack_from("<Q", raw, offset)
            offset += 8
            if offset + length > len(raw):
                raise FormatError(f"{path}: truncated JSON record {name!r}")
            meta = json.loads(raw[offset : offset + length].decode("utf-8"))
            offset += length
        elif kind == _KIND_MATRIX:
            rows, cols = struct.unpack_from("<QQ", raw, offset)
            offset += 16
            nbytes = rows * cols * 8
            if offset + nbytes > len(raw):
                raise FormatError(f"{path}: truncated matrix record {name!r}")
            values = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=offset)
            matrices[name] = values.reshape(rows, cols).copy()
            offset += nbytes
        else:
            raise FormatError(f"{path}: unknown record kind {kind} for {name!r}")
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes after last record")
    return matrices, meta


def _pack_name(name: str) -> bytes:
    encoded = name.encode("utf-8")
    return struct.pack("<I", len(encoded)) + encoded


def _unpack_name(raw: bytes, offset: int, path) -> tuple[str, int]:
    if offset + 4 > len(raw):
        raise FormatError(f"{path}: truncated record name length")
    (length,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if offset + length > len(raw):
        raise FormatError(f"{path}: truncated record name")
    return raw[offset : offset + length].decode("utf-8"), offset + length
