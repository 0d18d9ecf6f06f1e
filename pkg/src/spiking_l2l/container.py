"""Versioned binary container used for episode records and checkpoints.

Layout (little-endian)::

    bytes 0-3    magic b"SL2L"
    bytes 4-5    uint16 format version
    bytes 6-7    uint16 reserved (0)
    bytes 8-11   uint32 header length H
    bytes 12..   H bytes of UTF-8 JSON:
                 {"kind": str, "meta": {...}, "crc32": int,
                  "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    then         payload; each array C-contiguous at ``offset`` from payload start

``crc32`` covers the whole payload, so truncated or corrupted files are
rejected instead of silently loading garbage.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"SL2L"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHHI")


def write_container(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps({"kind": kind, "meta": meta, "crc32": zlib.crc32(payload),
                         "arrays": entries}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, 0, len(header)))
        fh.write(header)
        fh.write(payload)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_container(path, expect_kind: str | None = None):
    """Return ``(kind, meta, arrays)``; raises :class:`FormatError` on any defect."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: file too short")
    magic, version, _, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    payload = data[_PREFIX.size + hlen:]
    if zlib.crc32(payload) != header.get("crc32"):
        raise FormatError(f"{path}: payload checksum mismatch")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise FormatError(f"{path}: expected a {expect_kind!r} container, got {header['kind']!r}")
    arrays = {}
    for e in header["arrays"]:
        buf = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["kind"], header["meta"], arrays
