"""Versioned binary checkpoints of named parameters and their Adam state.

Layout (little endian)::

    b"QNCK" | u16 version | u32 header length | header (UTF-8 JSON) | payload

The header lists every parameter's name and shape plus free-form metadata.
The payload holds, per parameter in header order, value, first moment and
second moment as raw float64.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .nn import Parameter

MAGIC = b"QNCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(params: Sequence[Parameter], meta: dict | None = None) -> bytes:
    header = {
        "params": [{"name": p.name, "shape": list(p.shape), "decay": p.decay} for p in params],
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(head)), head]
    for p in params:
        for arr in (p.value, p.m, p.v):
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def loads(data: bytes) -> tuple[list[Parameter], dict]:
    if len(data) < 10 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, head_len = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 10
    if off + head_len > len(data):
        raise CheckpointError(f"truncated header at byte {off}")
    header = json.loads(data[off:off + head_len])
    off += head_len
    params = []
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        arrays = []
        for _ in range(3):
            end = off + 8 * n
            if end > len(data):
                raise CheckpointError(f"truncated payload for {spec['name']} at byte {off}")
            arrays.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
            off = end
        p = Parameter(arrays[0], spec["name"], spec["decay"])
        p.m, p.v = arrays[1], arrays[2]
        params.append(p)
    if off != len(data):
        raise CheckpointError(f"trailing bytes after offset {off}")
    return params, header["meta"]


def save(path, params: Sequence[Parameter], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(params, meta))


def load(path) -> tuple[list[Parameter], dict]:
    return loads(Path(path).read_bytes())
