"""Self-contained CFW1 codec (independent of the engine's implementation).

Layout, little-endian: magic "CFW1", u32 version (1), u32 tensor count,
then per tensor u16 name length + name, u8 dtype (0=f32, 1=f16), u8 rank,
u32 dims, raw data; trailing u64 fingerprint = first 8 bytes of SHA-256
over the tensor records.
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"CFW1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f2")}


class CfwError(ValueError):
    pass


def _record(name: str, array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array)
    if arr.dtype == np.float16:
        tag, arr = 1, arr.astype("<f2")
    else:
        tag, arr = 0, arr.astype("<f4")
    name_b = name.encode("utf-8")
    head = struct.pack("<H", len(name_b)) + name_b + struct.pack("<BB", tag, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + dims + arr.tobytes()


def write_cfw(tensors: "OrderedDict[str, np.ndarray]") -> bytes:
    """Serialize an ordered name->array map; float32 unless an array is f16."""
    h = hashlib.sha256()
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(tensors))
    for name, array in tensors.items():
        rec = _record(name, array)
        h.update(rec)
        out += rec
    out += h.digest()[:8]
    return bytes(out)


def fingerprint_of(data: bytes) -> int:
    """Trailing fingerprint of a serialized container."""
    if len(data) < 8:
        raise CfwError("container too small to carry a fingerprint")
    return struct.unpack("<Q", data[-8:])[0]


def read_cfw(data: bytes) -> "OrderedDict[str, np.ndarray]":
    view = memoryview(data)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise CfwError(f"truncated container while reading {what}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise CfwError("bad magic: not a CFW1 container")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CfwError(f"unsupported version {version}")
    h = hashlib.sha256()
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2, "dtype/rank"))
        if tag not in _DTYPES:
            raise CfwError(f"unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        nbytes = int(np.prod(dims, dtype=np.int64)) * _DTYPES[tag].itemsize
        arr = np.frombuffer(take(nbytes, f"data of {name!r}"), dtype=_DTYPES[tag])
        if name in out:
            raise CfwError(f"duplicate tensor {name!r}")
        out[name] = arr.reshape(dims).copy()
        h.update(view[start:pos])
    (declared,) = struct.unpack("<Q", take(8, "fingerprint"))
    if pos != len(view):
        raise CfwError("trailing bytes after fingerprint")
    if declared != struct.unpack("<Q", h.digest()[:8])[0]:
        raise CfwError("fingerprint mismatch: container is corrupt")
    return out
