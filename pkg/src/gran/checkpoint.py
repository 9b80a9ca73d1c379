"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"GRANCKPT"                      magic
    u32 format version
    u64 header length, header bytes  UTF-8 JSON, keys sorted
    u64 entry count
    per entry:
        u32 name length, name bytes  UTF-8
        u32 rank
        rank x u64                   dimensions
        float32 data                 C order

Arrays round-trip bit-exactly as float32.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import InputError

MAGIC = b"GRANCKPT"
FORMAT_VERSION = 1


def dumps(tensors, header):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    head = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    buf.write(struct.pack("<Q", len(head)))
    buf.write(head)
    buf.write(struct.pack("<Q", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4", order="C")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(blob):
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise InputError("checkpoint truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise InputError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != FORMAT_VERSION:
        raise InputError(f"unsupported checkpoint format version {version}")
    (hlen,) = struct.unpack("<Q", take(8))
    header = json.loads(bytes(take(hlen)).decode("utf-8"))
    (count,) = struct.unpack("<Q", take(8))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(4 * n), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float32)
    if pos != len(view):
        raise InputError("trailing bytes after checkpoint entries")
    return header, tensors


def save(path, tensors, header):
    with open(path, "wb") as f:
        f.write(dumps(tensors, header))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
