"""Deterministic versioned binary container for pipeline artifacts.

Layout (all integers little-endian):

    bytes 0..7    magic, 8 ASCII bytes identifying the artifact kind
    bytes 8..11   uint32 format version
    bytes 12..19  uint64 length of the JSON header
    ...           JSON header (sorted keys, compact separators)
    per array     name length (uint16), name bytes, dtype string length
                  (uint16), dtype bytes, uint8 ndim, uint64 shape entries,
                  raw C-order little-endian data

Writers never embed timestamps, so re-running a stage with identical inputs
reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


class ArtifactError(Exception):
    """Bad magic, version mismatch, or truncated artifact file."""


def write_container(path, magic: str, version: int, header: dict, arrays: dict):
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 characters")
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [magic.encode(), struct.pack("<I", version), struct.pack("<Q", len(head)), head]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.str
        parts.append(struct.pack("<H", len(name)))
        parts.append(name.encode())
        parts.append(struct.pack("<H", len(dt)))
        parts.append(dt.encode())
        parts.append(struct.pack("<B", arr.ndim))
        for s in arr.shape:
            parts.append(struct.pack("<Q", s))
        parts.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def read_container(path, magic: str, version: int):
    raw = Path(path).read_bytes()
    if len(raw) < 20:
        raise ArtifactError(f"{path}: truncated artifact")
    if raw[:8] != magic.encode():
        raise ArtifactError(f"{path}: expected {magic!r} artifact, found {raw[:8]!r}")
    got = struct.unpack("<I", raw[8:12])[0]
    if got != version:
        raise ArtifactError(f"{path}: format version {got}, this build reads {version}")
    hlen = struct.unpack("<Q", raw[12:20])[0]
    header = json.loads(raw[20 : 20 + hlen].decode())
    off = 20 + hlen
    arrays = {}
    while off < len(raw):
        nlen = struct.unpack("<H", raw[off : off + 2])[0]
        off += 2
        name = raw[off : off + nlen].decode()
        off += nlen
        dlen = struct.unpack("<H", raw[off : off + 2])[0]
        off += 2
        dt = np.dtype(raw[off : off + dlen].decode())
        off += dlen
        ndim = raw[off]
        off += 1
        shape = struct.unpack(f"<{ndim}Q", raw[off : off + 8 * ndim]) if ndim else ()
        off += 8 * ndim
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dt.itemsize
        arrays[name] = np.frombuffer(raw[off : off + nbytes], dtype=dt).reshape(shape).copy()
        off += nbytes
    return header, arrays
