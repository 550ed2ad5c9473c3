"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    b"COIP" | version | json_len | json bytes | n_params |
    n_params * (name_len | name utf-8 | rank | dims... | float32 LE data)

The JSON header holds the network spec plus optional metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from coips.errors import CheckpointError

MAGIC = b"COIP"
VERSION = 1
_U32 = struct.Struct("<I")


def dumps(header: Mapping[str, Any], params: Mapping[str, np.ndarray]) -> bytes:
    meta = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(meta)), meta, _U32.pack(len(params))]
    for name, arr in params.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(_U32.pack(len(raw_name)))
        parts.append(raw_name)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return _U32.unpack(take(4))[0]

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic bytes)")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(bytes(take(u32())).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    params: Dict[str, np.ndarray] = {}
    for _ in range(u32()):
        name = bytes(take(u32())).decode("utf-8")
        rank = u32()
        shape = tuple(u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float32)
        params[name] = data.reshape(shape)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint records")
    return header, params


def save(path: Union[str, Path], header: Mapping[str, Any], params: Mapping[str, np.ndarray]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(header, params))


def load(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(blob)
