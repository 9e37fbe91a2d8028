"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"MAGN" | version | len(meta) | meta (UTF-8 JSON) | n_blobs |
    n_blobs x (len(name) | name | rank | extents... | f32 payload)

The JSON metadata carries a ``config`` object and its ``config_digest``;
both are checked on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from magloc.errors import CheckpointError

MAGIC = b"MAGN"
VERSION = 1


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def encode_checkpoint(params: Iterable[tuple[str, np.ndarray]], metadata: dict) -> bytes:
    meta = dict(metadata)
    if "config" in meta:
        meta["config_digest"] = config_digest(meta["config"])
    meta_bytes = canonical_json(meta).encode("utf-8")
    params = list(params)
    out = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(params))]
    for name, arr in params:
        name_b = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<I", len(name_b)))
        out.append(name_b)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a magloc checkpoint (bad magic bytes)")
    pos = 4

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError("checkpoint truncated")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} is not supported (expected {VERSION})")
    (meta_len,) = take("<I")
    meta = json.loads(buf[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    if "config" in meta and meta.get("config_digest") != config_digest(meta["config"]):
        raise CheckpointError("config digest mismatch: metadata was altered or corrupted")
    (count,) = take("<I")
    params = []
    for _ in range(count):
        (name_len,) = take("<I")
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 4 * n > len(buf):
            raise CheckpointError(f"payload of {name!r} truncated")
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(shape).astype(np.float32)
        pos += 4 * n
        params.append((name, arr))
    if pos != len(buf):
        raise CheckpointError("trailing bytes after last parameter blob")
    return meta, params


def write_checkpoint(path, params, metadata: dict) -> None:
    Path(path).write_bytes(encode_checkpoint(params, metadata))


def read_checkpoint(path, expected_digest: str | None = None):
    meta, params = decode_checkpoint(Path(path).read_bytes())
    if expected_digest is not None and meta.get("config_digest") != expected_digest:
        raise CheckpointError(
            f"config digest {meta.get('config_digest')} does not match expected {expected_digest}"
        )
    return meta, params
