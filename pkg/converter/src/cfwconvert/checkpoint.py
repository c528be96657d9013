"""Torch-free reader for ZIP-based named-tensor checkpoint archives.

The archive layout is a zip holding ``<prefix>/data.pkl`` (a pickle whose
tensors reference storages by persistent id) and one raw little-endian
buffer per storage under ``<prefix>/data/<key>``.  The restricted
unpickler below reconstructs every named tensor as a numpy array and
refuses any unexpected global, so arbitrary checkpoints can be read
without importing the framework that wrote them.
"""

from __future__ import annotations

import io
import pickle
import zipfile
from collections import OrderedDict

import numpy as np


class CheckpointError(ValueError):
    pass


_STORAGE_DTYPES = {
    "FloatStorage": np.dtype("<f4"),
    "HalfStorage": np.dtype("<f2"),
    "DoubleStorage": np.dtype("<f8"),
    "LongStorage": np.dtype("<i8"),
    "IntStorage": np.dtype("<i4"),
    "ShortStorage": np.dtype("<i2"),
    "CharStorage": np.dtype("i1"),
    "ByteStorage": np.dtype("u1"),
    "BoolStorage": np.dtype("bool"),
}


class _StorageTag:
    def __init__(self, dtype: np.dtype):
        self.dtype = dtype


class _LazyStorage:
    def __init__(self, dtype: np.dtype, key: str, numel: int):
        self.dtype = dtype
        self.key = key
        self.numel = numel


def _rebuild_tensor(storage: _LazyStorage, offset, size, stride, *_args):
    return ("tensor", storage, int(offset), tuple(size), tuple(stride))


def _rebuild_from_type_v2(func, _new_type, args, _state=None):
    # wrapper used for subclassed tensors; the inner rebuild does the work
    return func(*args)


_ALLOWED_GLOBALS = {
    ("collections", "OrderedDict"): OrderedDict,
    ("torch._utils", "_rebuild_tensor_v2"): _rebuild_tensor,
    ("torch._utils", "_rebuild_tensor"): _rebuild_tensor,
    ("torch._tensor", "_rebuild_from_type_v2"): _rebuild_from_type_v2,
}


class _RestrictedUnpickler(pickle.Unpickler):
    def __init__(self, fh, loader):
        super().__init__(fh)
        self._loader = loader

    def find_class(self, module, name):
        if (module, name) in _ALLOWED_GLOBALS:
            return _ALLOWED_GLOBALS[(module, name)]
        if name in _STORAGE_DTYPES and module.startswith("torch"):
            return _StorageTag(_STORAGE_DTYPES[name])
        raise CheckpointError(
            f"refusing to unpickle global {module}.{name} from checkpoint"
        )

    def persistent_load(self, pid):
        if not (isinstance(pid, tuple) and pid and pid[0] == "storage"):
            raise CheckpointError(f"unsupported persistent id {pid!r}")
        storage_type, key, _location, numel = pid[1], pid[2], pid[3], pid[4]
        if isinstance(storage_type, _StorageTag):
            dtype = storage_type.dtype
        else:
            raise CheckpointError(f"unknown storage type {storage_type!r}")
        return _LazyStorage(dtype, str(key), int(numel))


def _materialize(value, raw_reader):
    if isinstance(value, tuple) and value and value[0] == "tensor":
        _tag, storage, offset, size, stride = value
        raw = raw_reader(storage.key)
        flat = np.frombuffer(raw, dtype=storage.dtype)
        if flat.size < storage.numel:
            raise CheckpointError(
                f"storage {storage.key} holds {flat.size} elements, "
                f"expected {storage.numel}"
            )
        itemsize = flat.dtype.itemsize
        strided = np.lib.stride_tricks.as_strided(
            flat[offset:],
            shape=size,
            strides=tuple(s * itemsize for s in stride),
        )
        return np.array(strided)  # contiguous copy owning its data
    return value


def read_checkpoint(path: str) -> "OrderedDict[str, np.ndarray]":
    """Named tensors of a checkpoint archive as numpy arrays."""
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot open checkpoint {path!r}: {e}") from None
    with zf:
        names = zf.namelist()
        pickles = [n for n in names if n.endswith("/data.pkl")]
        if not pickles:
            raise CheckpointError(f"{path!r} has no data.pkl member; not a checkpoint")
        prefix = pickles[0][: -len("data.pkl")]
        byteorder = f"{prefix}byteorder"
        if byteorder in names and zf.read(byteorder).strip() != b"little":
            raise CheckpointError("big-endian checkpoints are not supported")

        def raw_reader(key: str) -> bytes:
            return zf.read(f"{prefix}data/{key}")

        obj = _RestrictedUnpickler(io.BytesIO(zf.read(pickles[0])), raw_reader).load()
        if not isinstance(obj, dict):
            raise CheckpointError(
                f"checkpoint root is {type(obj).__name__}, expected a name->tensor map"
            )
        out = OrderedDict()
        for name, value in obj.items():
            out[str(name)] = _materialize(value, raw_reader)
        return out
