"""Flat binary checkpoint container.

Layout (all integers little-endian)::

    b"SFAH1"
    u32 header_len, header bytes (UTF-8 ``key=value`` lines; may be empty)
    u32 record_count
    per record: u32 name_len, name (UTF-8), u32 rank, rank x u64 dims,
                prod(dims) x f64 values
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"SFAH1"

__all__ = ["MAGIC", "CheckpointError", "save_checkpoint", "load_checkpoint", "dumps", "loads"]


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint."""


def _as_array(v) -> np.ndarray:
    return np.asarray(v.data if isinstance(v, Tensor) else v, dtype=np.float64)


def dumps(tensors: dict, header: dict[str, str] | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    text = "".join(f"{k}={v}\n" for k, v in (header or {}).items()).encode("utf-8")
    buf.write(struct.pack("<I", len(text)))
    buf.write(text)
    buf.write(struct.pack("<I", len(tensors)))
    for name, value in tensors.items():
        arr = _as_array(value)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[OrderedDict[str, np.ndarray], dict[str, str]]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(len(MAGIC))) != MAGIC:
        raise CheckpointError("bad magic; not an SFAH1 checkpoint")
    (hlen,) = struct.unpack("<I", take(4))
    header = {}
    for line in bytes(take(hlen)).decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            header[key] = value
    (count,) = struct.unpack("<I", take(4))
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last record")
    return tensors, header


def save_checkpoint(path, tensors: dict, header: dict[str, str] | None = None) -> Path:
    path = Path(path)
    path.write_bytes(dumps(tensors, header))
    return path


def load_checkpoint(path) -> tuple[OrderedDict[str, np.ndarray], dict[str, str]]:
    return loads(Path(path).read_bytes())
