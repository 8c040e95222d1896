"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"CWAN"                      magic
    u32  version                 currently 1
    u32  header length
    ...  UTF-8 JSON architecture descriptor
    u32  tensor count
    per tensor:
        u16 name length, name (UTF-8)
        u8  dtype code (1 = float32)
        u8  ndim, then ndim x u32 dims
        u64 byte offset into the payload
    payload: concatenated little-endian float32 data

Tensors are written in insertion order; round trips are bit-exact.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CWAN"
VERSION = 1
_DTYPES = {1: np.dtype("<f4")}
_CODES = {np.dtype("<f4"): 1}


class CheckpointError(ValueError):
    """Malformed, unsupported or mismatched checkpoint."""


def dumps(descriptor: dict, tensors: dict[str, np.ndarray]) -> bytes:
    header = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")
    table = io.BytesIO()
    payload = io.BytesIO()
    table.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        table.write(struct.pack("<H", len(raw)))
        table.write(raw)
        table.write(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        table.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        table.write(struct.pack("<Q", payload.tell()))
        payload.write(arr.tobytes())
    return b"".join(
        [MAGIC, struct.pack("<II", VERSION, len(header)), header, table.getvalue(), payload.getvalue()]
    )


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a CWAN checkpoint (bad magic)")
    try:
        version, hlen = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        descriptor = json.loads(blob[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        entries = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            code, ndim = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            (offset,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            if code not in _DTYPES:
                raise CheckpointError(f"unknown dtype code {code} for {name!r}")
            entries.append((name, _DTYPES[code], shape, offset))
        tensors = {}
        for name, dtype, shape, offset in entries:
            n = int(np.prod(shape, dtype=np.int64))
            start = pos + offset
            if start + n * dtype.itemsize > len(blob):
                raise CheckpointError(f"payload for {name!r} is truncated")
            tensors[name] = np.frombuffer(blob, dtype=dtype, count=n, offset=start).reshape(shape).astype(np.float32)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return descriptor, tensors


def save(path, descriptor, tensors):
    Path(path).write_bytes(dumps(descriptor, tensors))


def load(path):
    return loads(Path(path).read_bytes())
