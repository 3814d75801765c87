"""Versioned binary tensor container.

Layout: magic "MXKT" | version u32 | meta_len u32 | meta JSON (sorted
keys) | tensor_count u32 | tensors (name, shape, float64 LE payload) |
crc32 of everything after the magic.  Deterministic bytes for identical
inputs, which the pipeline-determinism guarantees rely on.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib

import numpy as np

from .errors import IncompatibleConfig

MAGIC = b"MXKT"
FORMAT_VERSION = 1


def save_tensors(path, meta: dict, tensors) -> None:
    """tensors: iterable of (name, ndarray); order is preserved."""
    body = bytearray()
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    body += struct.pack("<II", FORMAT_VERSION, len(meta_raw))
    body += meta_raw
    tensors = list(tensors)
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        raw_name = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        body += struct.pack("<H", len(raw_name))
        body += raw_name
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_tensors(path):
    """Returns (meta, list of (name, ndarray)); verifies magic and crc."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise IncompatibleConfig(f"{path}: bad magic {blob[:4]!r}")
    body, (crc,) = blob[4:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise IncompatibleConfig(f"{path}: checksum mismatch")
    off = 0
    version, meta_len = struct.unpack_from("<II", body, off)
    off += 8
    if version != FORMAT_VERSION:
        raise IncompatibleConfig(f"{path}: format version {version} unsupported")
    meta = json.loads(body[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        tensors.append((name, arr.copy()))
    return meta, tensors


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
