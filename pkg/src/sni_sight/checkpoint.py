"""Versioned binary checkpoint files for model parameters and optimizer state.

Layout (all integers little-endian u32):
    magic "SNIM" | format version | metadata length | metadata JSON (UTF-8)
    | tensor count | per tensor: name length, name, rank, dims..., float64 data

Tensors are written sorted by name so identical contents give identical
bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"SNIM"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptTensor(CheckpointError):
    pass


def save_checkpoint(path, tensors: dict, metadata: dict) -> None:
    """Write named float64 tensors plus a JSON metadata blob."""
    blob = json.dumps(metadata, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f8", order="C")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read back (tensors, metadata); refuses foreign or mismatched files."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise BadMagic(f"not a checkpoint file (magic {data[:4]!r})")
    view = _View(data, 4)
    version = view.u32("format version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {version}, expected {FORMAT_VERSION}")
    meta_len = view.u32("metadata length")
    try:
        metadata = json.loads(view.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptTensor(f"metadata block unreadable: {exc}") from None
    tensors = {}
    count = view.u32("tensor count")
    for _ in range(count):
        name_len = view.u32("name length")
        name = view.take(name_len, "name").decode("utf-8")
        rank = view.u32("rank")
        shape = tuple(view.u32("dim") for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        raw = view.take(8 * n, f"tensor {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if view.pos != len(data):
        raise CorruptTensor(f"{len(data) - view.pos} trailing bytes after last tensor")
    return tensors, metadata


class _View:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptTensor(f"file truncated reading {what} at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]
