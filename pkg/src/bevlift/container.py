"""Single-tensor binary container ("BVT1").

Layout, all little-endian::

    magic     4 bytes  b"BVT1"
    rank      uint32
    dims      rank x uint64
    dtype     uint8    1 = float32, 2 = float64
    payload   row-major values
    meta_len  uint64
    metadata  meta_len bytes of UTF-8 JSON (keys sorted)
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContainerError

MAGIC = b"BVT1"
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def encode(array: np.ndarray, metadata: dict | None = None) -> bytes:
    a = np.asarray(array)
    if a.dtype not in _TAGS:
        raise ContainerError(f"unsupported dtype {a.dtype}; use float32 or float64")
    tag = _TAGS[a.dtype]
    payload = np.ascontiguousarray(a, dtype=_DTYPES[tag]).tobytes(order="C")
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode()
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape) + struct.pack("<B", tag)
    return head + payload + struct.pack("<Q", len(meta)) + meta


def decode(blob: bytes) -> tuple[np.ndarray, dict]:
    if len(blob) < 9 or blob[:4] != MAGIC:
        raise ContainerError("bad magic; not a BVT1 container")
    off = 4
    (rank,) = struct.unpack_from("<I", blob, off)
    off += 4
    if len(blob) < off + 8 * rank + 1:
        raise ContainerError("truncated header")
    dims = struct.unpack_from(f"<{rank}Q", blob, off)
    off += 8 * rank
    (tag,) = struct.unpack_from("<B", blob, off)
    off += 1
    if tag not in _DTYPES:
        raise ContainerError(f"unknown dtype tag {tag}")
    dt = _DTYPES[tag]
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    size = n * dt.itemsize
    if len(blob) < off + size + 8:
        raise ContainerError("payload shorter than dims imply")
    arr = np.frombuffer(blob, dtype=dt, count=n, offset=off).reshape(dims).copy()
    off += size
    (mlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if len(blob) != off + mlen:
        raise ContainerError("metadata length does not match file size")
    try:
        meta = json.loads(blob[off:].decode()) if mlen else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"metadata is not valid JSON: {exc}") from exc
    return arr.astype(dt.newbyteorder("="), copy=False), meta


def write(path: str | Path, array: np.ndarray, metadata: dict | None = None) -> None:
    Path(path).write_bytes(encode(array, metadata))


def read(path: str | Path) -> tuple[np.ndarray, dict]:
    return decode(Path(path).read_bytes())
