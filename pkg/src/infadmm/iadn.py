"""IADN binary container for tensors and network weights.

Layout (all integers unsigned 32-bit little-endian)::

    b"IADN" | version | tensor count
    per tensor: rank | dims[rank] | float64 LE data (row-major)
    share count | share count x (slot, tensor index)
    metadata length | UTF-8 JSON metadata

The share table maps parameter slots (for networks: the index of a layer
that reuses a kernel) onto the single stored copy of that tensor. Files
that end right after the tensors are valid and carry no shares or metadata.
"""
import json
import struct

import numpy as np

MAGIC = b"IADN"
VERSION = 1


class IadnFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def encode(tensors, shares=(), meta=None):
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for t in tensors:
        arr = np.asarray(t, dtype="<f8", order="C")
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    parts.append(struct.pack("<I", len(shares)))
    for slot, index in shares:
        parts.append(struct.pack("<II", slot, index))
    blob = json.dumps(meta if meta is not None else {}, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise IadnFormatError(f"truncated file while reading {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def decode(data):
    """Return ``(tensors, shares, meta)`` from IADN bytes."""
    rd = _Reader(bytes(data))
    magic = rd.take(4, "magic")
    if magic != MAGIC:
        raise IadnFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version = rd.u32("version")
    if version != VERSION:
        raise IadnFormatError(f"unsupported version {version}", 4)
    count = rd.u32("tensor count")
    tensors = []
    for i in range(count):
        rank = rd.u32(f"rank of tensor {i}")
        dims = struct.unpack(f"<{rank}I", rd.take(4 * rank, f"dims of tensor {i}"))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = rd.take(8 * size, f"data of tensor {i}")
        tensors.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims))
    shares, meta = [], {}
    if rd.pos == len(rd.data):
        return tensors, shares, meta
    nshare = rd.u32("share count")
    for _ in range(nshare):
        at = rd.pos
        slot, index = struct.unpack("<II", rd.take(8, "share entry"))
        if index >= count:
            raise IadnFormatError(f"share entry points at missing tensor {index}", at)
        shares.append((slot, index))
    if rd.pos < len(rd.data):
        at = rd.pos
        length = rd.u32("metadata length")
        blob = rd.take(length, "metadata")
        try:
            meta = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IadnFormatError(f"unreadable metadata: {exc}", at) from exc
    if rd.pos != len(rd.data):
        raise IadnFormatError("trailing bytes after metadata", rd.pos)
    return tensors, shares, meta


def write(path, tensors, shares=(), meta=None):
    with open(path, "wb") as fh:
        fh.write(encode(tensors, shares, meta))


def read(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
