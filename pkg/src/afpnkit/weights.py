"""Named parameter tensors and their on-disk container.

The container is a JSON manifest ``{name: {shape, dtype, offset, length}}``
next to a raw little-endian float32 blob with the same stem and a ``.bin``
suffix.  Offsets and lengths count elements, not bytes.
"""
from __future__ import annotations

import json
import os
import tempfile
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .tensor import DTYPE

BLOB_DTYPE = np.dtype("<f4")


class MissingWeightError(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"missing weight tensor {self.name!r}"


class WeightFormatError(ValueError):
    pass


class WeightStore(Mapping):
    """Read-only mapping from dotted parameter names to arrays."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self._tensors = {}
        for name, value in (tensors or {}).items():
            arr = np.array(value, dtype=DTYPE)
            arr.setflags(write=False)
            self._tensors[str(name)] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise MissingWeightError(name) from None

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def require(self, names) -> None:
        for name in names:
            if name not in self._tensors:
                raise MissingWeightError(name)

    def with_tensor(self, name: str, value) -> "WeightStore":
        merged = dict(self._tensors)
        merged[name] = value
        return WeightStore(merged)

    def save(self, path) -> None:
        save_weights(self, path)

    @classmethod
    def load(cls, path) -> "WeightStore":
        return load_weights(path)


def blob_path(manifest_path) -> Path:
    return Path(manifest_path).with_suffix(".bin")


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def save_weights(store: Mapping[str, np.ndarray], path) -> None:
    path = Path(path)
    manifest, chunks, offset = {}, [], 0
    for name in sorted(store):
        arr = np.asarray(store[name], dtype=BLOB_DTYPE)
        manifest[name] = {
            "shape": list(arr.shape),
            "dtype": "f32",
            "offset": offset,
            "length": int(arr.size),
        }
        chunks.append(arr.ravel().tobytes())
        offset += arr.size
    _atomic_write(blob_path(path), b"".join(chunks))
    _atomic_write(path, (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())


def load_weights(path) -> WeightStore:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
        blob = np.frombuffer(blob_path(path).read_bytes(), dtype=BLOB_DTYPE)
    except (OSError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"cannot read weight container {path}: {exc}") from exc
    tensors = {}
    for name, entry in manifest.items():
        if entry.get("dtype") != "f32":
            raise WeightFormatError(f"{name}: unsupported dtype {entry.get('dtype')!r}")
        shape = tuple(int(s) for s in entry["shape"])
        offset, length = int(entry["offset"]), int(entry["length"])
        if int(np.prod(shape)) != length or offset < 0 or offset + length > blob.size:
            raise WeightFormatError(f"{name}: manifest entry inconsistent with blob")
        tensors[name] = blob[offset:offset + length].reshape(shape)
    return WeightStore(tensors)
