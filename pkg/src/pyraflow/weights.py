"""Weight containers: deterministic init, the CFW1 binary format, fingerprints.

CFW1 container layout (all little-endian):

    magic   4 bytes  b"CFW1"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u16, name bytes (utf-8)
        dtype    u8   0 = float32, 1 = float16
        rank     u8
        dims     u32 * rank
        data     raw little-endian values, prod(dims) elements
    fingerprint u64  first 8 bytes of SHA-256 over every tensor record above

The fingerprint is order- and content-sensitive and identical to
:func:`fingerprint` of the in-memory store, so independent implementations
of the format can cross-check each other.

Deterministic initialization draws from numpy's Philox generator (a named,
counter-based, platform-stable PRNG), sequentially over the store's entry
order, uniform in [-limit, limit] with limit = sqrt(6 / fan_in).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CFW1"
VERSION = 1

_DTYPE_TAGS = {"f32": 0, "f16": 1}
_TAG_DTYPES = {0: "f32", 1: "f16"}
_NP_DTYPES = {"f32": np.dtype("<f4"), "f16": np.dtype("<f2")}


class WeightFormatError(ValueError):
    """Raised for malformed CFW1 streams (message states the defect)."""


@dataclass
class WeightEntry:
    name: str
    data: np.ndarray  # always float32 in memory
    dtype: str = "f32"  # serialization dtype tag

    def __post_init__(self):
        if self.dtype not in _DTYPE_TAGS:
            raise ValueError(f"unknown dtype tag {self.dtype!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)


@dataclass
class WeightStore:
    """Ordered, named tensor collection; iteration order == insertion order."""

    metadata: dict = field(default_factory=dict)
    _entries: dict[str, WeightEntry] = field(default_factory=dict)

    def add(self, name: str, data: np.ndarray, dtype: str = "f32") -> None:
        if name in self._entries:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        self._entries[name] = WeightEntry(name, data, dtype)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def entries(self) -> list[WeightEntry]:
        return list(self._entries.values())

    def get(self, name: str) -> np.ndarray:
        try:
            return self._entries[name].data
        except KeyError:
            raise KeyError(name) from None

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {n: tuple(e.data.shape) for n, e in self._entries.items()}


class RecordingStore:
    """Wraps a store and records which tensors a forward pass consumes."""

    def __init__(self, store: WeightStore):
        self._store = store
        self.accessed: dict[str, int] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def get(self, name: str) -> np.ndarray:
        data = self._store.get(name)
        self.accessed[name] = int(np.prod(data.shape))
        return data


def _serialize_entry(entry: WeightEntry) -> bytes:
    name_b = entry.name.encode("utf-8")
    if len(name_b) > 0xFFFF:
        raise WeightFormatError(f"tensor name too long: {entry.name[:32]!r}...")
    data = entry.data.astype(_NP_DTYPES[entry.dtype])
    head = struct.pack(
        "<H", len(name_b)
    ) + name_b + struct.pack("<BB", _DTYPE_TAGS[entry.dtype], data.ndim)
    dims = struct.pack(f"<{data.ndim}I", *data.shape) if data.ndim else b""
    return head + dims + data.tobytes()


def fingerprint(store: WeightStore) -> int:
    """64-bit digest over the store's serialized tensor records."""
    h = hashlib.sha256()
    for entry in store.entries():
        h.update(_serialize_entry(entry))
    return struct.unpack("<Q", h.digest()[:8])[0]


def save_weights(store: WeightStore, dtype: str | None = None) -> bytes:
    """Serialize to CFW1 bytes.

    ``dtype`` forces a serialization dtype for every tensor; ``None`` keeps
    each entry's own tag, which makes save(load(b)) == b byte-identical.
    """
    entries = store.entries()
    if dtype is not None:
        if dtype not in _DTYPE_TAGS:
            raise ValueError(f"unknown dtype tag {dtype!r}")
        entries = [WeightEntry(e.name, e.data, dtype) for e in entries]
    h = hashlib.sha256()
    body = bytearray()
    body += MAGIC
    body += struct.pack("<II", VERSION, len(entries))
    for entry in entries:
        rec = _serialize_entry(entry)
        h.update(rec)
        body += rec
    body += struct.pack("<Q", struct.unpack("<Q", h.digest()[:8])[0])
    return bytes(body)


def load_weights(data: bytes) -> WeightStore:
    """Parse CFW1 bytes; float16 payloads are upcast to float32 in memory."""
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise WeightFormatError(f"truncated stream while reading {what}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise WeightFormatError("bad magic: not a CFW1 container")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise WeightFormatError(f"unsupported version {version} (expected {VERSION})")

    store = WeightStore(metadata={"format_version": version})
    h = hashlib.sha256()
    for i in range(count):
        rec_start = pos
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2, "dtype/rank"))
        if tag not in _TAG_DTYPES:
            raise WeightFormatError(f"unknown dtype tag {tag} for tensor {name!r}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims")) if rank else ()
        np_dtype = _NP_DTYPES[_TAG_DTYPES[tag]]
        nbytes = int(np.prod(dims, dtype=np.int64)) * np_dtype.itemsize
        raw = take(nbytes, f"data of {name!r}")
        arr = np.frombuffer(raw, dtype=np_dtype).reshape(dims)
        if name in store:
            raise WeightFormatError(f"duplicate tensor name {name!r}")
        store.add(name, arr.astype(np.float32), _TAG_DTYPES[tag])
        h.update(view[rec_start:pos])
    (declared,) = struct.unpack("<Q", take(8, "fingerprint"))
    if pos != len(view):
        raise WeightFormatError(f"{len(view) - pos} trailing bytes after fingerprint")
    actual = struct.unpack("<Q", h.digest()[:8])[0]
    if declared != actual:
        raise WeightFormatError(
            f"fingerprint mismatch: file declares {declared:#018x}, "
            f"content hashes to {actual:#018x}"
        )
    return store


def init_deterministic(manifest, seed: int, variant: str = "") -> WeightStore:
    """Fan-in-scaled uniform init over a parameter manifest.

    ``manifest`` is an ordered iterable of (name, shape, fan_in) triples.
    Identical (manifest, seed) pairs produce bit-identical stores on every
    platform (Philox counter-based generator, sequential draws).
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    store = WeightStore(metadata={"variant": variant, "seed": int(seed)})
    for name, shape, fan_in in manifest:
        limit = np.float32(np.sqrt(6.0 / max(1, fan_in)))
        vals = rng.random(size=shape, dtype=np.float32)
        store.add(name, (vals * (2 * limit) - limit).astype(np.float32))
    return store
