"""RBT raw tensor files and the checkpoint container built on them.

An RBT blob is ``b"RBT1"``, a little-endian u32 rank, ``rank`` little-endian
u32 dims, then the row-major little-endian f32 payload.

A checkpoint is ``b"RBCK"``, a u32 format version, a u32 manifest length,
the UTF-8 JSON manifest, then the RBT blobs back to back.  Manifest offsets
are relative to the first byte after the manifest.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import FormatError

MAGIC = b"RBT1"
CKPT_MAGIC = b"RBCK"
CKPT_VERSION = 1


def encode(array) -> bytes:
    arr = np.array(array, dtype="<f4", order="C")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def decode(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one RBT blob starting at ``offset``; returns (array, end offset)."""
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError("bad RBT magic")
    try:
        (rank,) = struct.unpack_from("<I", buf, offset + 4)
        pos = offset + 8
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
    except struct.error as exc:
        raise FormatError("truncated RBT header") from exc
    pos += 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = pos + 4 * count
    if end > len(buf):
        raise FormatError("truncated RBT payload")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims)
    return arr.astype(np.float32), end


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode(array))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after RBT payload")
    return arr


def write_checkpoint(path, params: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    blobs = []
    entries = []
    offset = 0
    for name, value in params.items():
        blob = encode(value)
        entries.append({"name": name, "shape": list(np.shape(value)), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps({"version": CKPT_VERSION, "meta": dict(meta or {}), "tensors": entries},
                          sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    buf = Path(path).read_bytes()
    if buf[:4] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version, mlen = struct.unpack_from("<II", buf, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    manifest = json.loads(buf[12:12 + mlen].decode("utf-8"))
    base = 12 + mlen
    params = {}
    for entry in manifest["tensors"]:
        arr, end = decode(buf, base + entry["offset"])
        if list(arr.shape) != entry["shape"] or end - base - entry["offset"] != entry["nbytes"]:
            raise FormatError(f"manifest mismatch for {entry['name']}")
        params[entry["name"]] = arr
    return params, manifest["meta"]
