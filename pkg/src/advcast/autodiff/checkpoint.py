"""Parameter checkpoint container.

Layout (all integers little-endian)::

    b"ADCK" | u16 version | u32 header length | UTF-8 JSON header | float32 LE buffers

The header records the embedded config and, for each tensor in order, its
name, shape and byte offset relative to the start of the buffer section.
Headers are serialized deterministically so ``write(read(b)) == b``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..exceptions import CheckpointFormatError

MAGIC = b"ADCK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def encode_checkpoint(tensors: Mapping[str, np.ndarray], config: Mapping | None = None) -> bytes:
    entries = []
    buffers = []
    offset = 0
    for name, arr in tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        buffers.append(buf)
        offset += len(buf)
    header = {
        "format": "advcast-checkpoint",
        "endianness": "little",
        "dtype": "float32",
        "config": dict(config or {}),
        "tensors": entries,
    }
    hbytes = json.dumps(header, indent=1, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(buffers)


def decode_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < _PREFIX.size:
        raise CheckpointFormatError("checkpoint truncated before header")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError("corrupt checkpoint header") from exc
    body = start + hlen
    tensors: dict[str, np.ndarray] = {}
    for e in header["tensors"]:
        lo = body + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(data):
            raise CheckpointFormatError(f"tensor {e['name']} runs past end of file")
        arr = np.frombuffer(data[lo:hi], dtype="<f4").astype(np.float32).reshape(e["shape"])
        tensors[e["name"]] = arr
    return tensors, header["config"]


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], config: Mapping | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors, config))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())
