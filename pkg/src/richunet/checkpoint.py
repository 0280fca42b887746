"""Binary checkpoint container.

Layout (all integers little-endian u32):

    magic "RUN1" | version | entry count |
    per entry: name length | name bytes (utf-8) | rank | dims... | float64 payload

Entries are an ordered list of (name, float64 array); order is part of
the format so save(load(f)) reproduces f byte for byte.
"""

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"RUN1"
VERSION = 1


def checkpoint_save(path, entries):
    """entries: iterable of (name, array-like), written in order."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    items = list(entries)
    buf += struct.pack("<I", len(items))
    for name, arr in items:
        a = np.asarray(arr, dtype=np.float64)
        # ascontiguousarray would promote rank 0 to rank 1; 0-d is contiguous
        if a.ndim and not a.flags.c_contiguous:
            a = np.ascontiguousarray(a)
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        buf += struct.pack("<I", a.ndim)
        if a.ndim:
            buf += struct.pack(f"<{a.ndim}I", *a.shape)
        buf += a.astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(buf)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated while reading {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def checkpoint_load(path):
    """Returns the ordered [(name, array)] list; validates the container fully
    before returning (no partial state)."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic, not a checkpoint file", 0)
    version = r.u32("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}", 4)
    count = r.u32("entry count")
    entries = []
    for i in range(count):
        nlen = r.u32(f"entry {i} name length")
        name = r.take(nlen, f"entry {i} name").decode("utf-8")
        rank = r.u32(f"{name} rank")
        dims = tuple(r.u32(f"{name} dim") for _ in range(rank))
        size = 1
        for d in dims:
            size *= d
        payload = r.take(8 * size, f"{name} payload")
        arr = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        entries.append((name, arr))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last entry", r.pos)
    return entries
