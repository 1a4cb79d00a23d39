"""Versioned binary model envelope and atomic file writing.

Layout (all integers little-endian):

    magic    8 bytes  b"MDROPMD1"
    version  u32
    kind     u32      1 = ngram embedding model, 2 = video embedding set,
                      3 = dropout predictor
    meta_len u32      UTF-8 JSON metadata (sorted keys)
    meta     bytes
    n_tensor u16
    per tensor: ndim u8, dims u64 each, then float64 data, little-endian,
    C order.

Files are written to a temporary sibling and renamed into place, so a killed
run never leaves a truncated file that loads.  Loading validates the magic,
version, declared tensor shapes, trailing bytes, and finiteness.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import InputError

__all__ = [
    "MAGIC",
    "VERSION",
    "KIND_NGRAM_MODEL",
    "KIND_VIDEO_EMBEDDINGS",
    "KIND_DROPOUT_PREDICTOR",
    "write_model",
    "read_model",
    "atomic_write_bytes",
    "atomic_write_text",
]

MAGIC = b"MDROPMD1"
VERSION = 1

KIND_NGRAM_MODEL = 1
KIND_VIDEO_EMBEDDINGS = 2
KIND_DROPOUT_PREDICTOR = 3


def atomic_write_bytes(path: str, data: bytes):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_model(path: str, kind: int, meta: dict, tensors: list[np.ndarray]):
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, kind),
             struct.pack("<I", len(meta_bytes)), meta_bytes,
             struct.pack("<H", len(tensors))]
    for arr in tensors:
        arr = np.asarray(arr, dtype=np.float64)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f8", copy=False).tobytes())  # tobytes is C order
    atomic_write_bytes(path, b"".join(parts))


def read_model(path: str, expect_kind: int | None = None) -> tuple[int, dict, list[np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(nbytes: int) -> bytes:
        nonlocal off
        if off + nbytes > len(blob):
            raise InputError(f"model file {path!r} is truncated")
        chunk = blob[off:off + nbytes]
        off += nbytes
        return chunk

    if take(8) != MAGIC:
        raise InputError(f"{path!r} is not a model file (bad magic)")
    version, kind = struct.unpack("<II", take(8))
    if version != VERSION:
        raise InputError(f"unsupported model version {version} in {path!r}")
    if expect_kind is not None and kind != expect_kind:
        raise InputError(f"{path!r} holds model kind {kind}, expected {expect_kind}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (n_tensors,) = struct.unpack("<H", take(2))
    tensors = []
    for _ in range(n_tensors):
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise InputError(f"non-finite parameters in {path!r}")
        tensors.append(arr)
    if off != len(blob):
        raise InputError(f"trailing bytes in {path!r}")
    return kind, meta, tensors
