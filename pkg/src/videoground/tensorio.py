"""Binary container for feature tensors and projector weights.

File layout:

    magic b"VGT1"
    u32 little-endian header length
    header JSON (utf-8)
    flat little-endian float32 payload

The header describes one or more named tensors sharing the payload::

    {"dtype": "float32", "byteorder": "little",
     "tensors": [{"name": ..., "shape": [...], "layout": ...}, ...],
     "meta": {...}}

Tensors are stored back to back in header order. ``layout`` is an
optional free-form marker (e.g. the token-block ordering of a video
feature) and ``meta`` carries container-level metadata such as a
projector seed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError

_MAGIC = b"VGT1"


def write_tensors(
    path: str | Path,
    tensors: dict[str, np.ndarray],
    layouts: dict[str, str] | None = None,
    meta: dict | None = None,
) -> None:
    """Write named float tensors to ``path`` in declaration order."""
    if not tensors:
        raise InvalidInputError("container needs at least one tensor")
    layouts = layouts or {}
    entries = []
    chunks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError(f"tensor {name!r} has non-finite entries")
        entry = {"name": name, "shape": list(arr.shape)}
        if name in layouts:
            entry["layout"] = layouts[name]
        entries.append(entry)
        chunks.append(arr.astype("<f4").tobytes(order="C"))
    header = {
        "dtype": "float32",
        "byteorder": "little",
        "tensors": entries,
    }
    if meta:
        header["meta"] = meta
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(
        [_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes, *chunks]
    )
    Path(path).write_bytes(blob)


def read_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container; returns ({name: array}, header) with arrays as float64."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise InvalidInputError(f"{path}: not a tensor container")
    (header_len,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    offset = 8 + header_len
    out: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if len(raw) - offset < nbytes:
            raise InvalidInputError(f"{path}: truncated payload for {entry['name']!r}")
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        out[entry["name"]] = data.reshape(shape).astype(np.float64)
        offset += nbytes
    return out, header
