"""Flat tensor archive used for checkpoints, feature caches and spectrogram dumps.

Byte layout (all integers little-endian)::

    magic     8 bytes   b"AEMSRTA\\0"
    version   u32       currently 1
    meta_len  u32       length of the UTF-8 JSON metadata block
    meta      bytes     JSON object (may be "{}")
    count     u32       number of entries
    entry*    repeated:
        name_len  u16
        name      UTF-8 bytes
        ndim      u8
        dims      ndim x u32
        payload   prod(dims) x float64 (little-endian, C order)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from ..errors import FormatError, VersionError

MAGIC = b"AEMSRTA\x00"
VERSION = 1
PathLike = Union[str, Path]


def dumps(tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> bytes:
    meta_bytes = json.dumps(dict(meta or {}), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> Tuple[Dict[str, np.ndarray], dict]:
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise FormatError("not a tensor archive (bad magic)")
    version, meta_len = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise VersionError(f"unsupported archive version {version}")
    pos = 16
    out: Dict[str, np.ndarray] = {}
    try:
        meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            n = int(np.prod(dims)) if ndim else 1
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64)
            pos += 8 * n
            out[name] = arr.reshape(dims)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated or corrupt tensor archive: {exc}") from exc
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after tensor archive")
    return out, meta


def save(path: PathLike, tensors: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path: PathLike) -> Tuple[Dict[str, np.ndarray], dict]:
    p = Path(path)
    if not p.exists():
        raise FormatError(f"no such archive: {p}")
    return loads(p.read_bytes())


def save_module(path: PathLike, module, meta: Mapping | None = None) -> None:
    save(path, module.state_dict(), meta)


def load_module(path: PathLike, module) -> dict:
    state, meta = load(path)
    module.load_state_dict(state)
    return meta
