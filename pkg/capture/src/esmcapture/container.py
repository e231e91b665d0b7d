"""Minimal reader/writer for the float32 tensor container shared with the
merging toolkit: 8-byte little-endian header length, JSON header with
{dtype, shape, data_offsets} per tensor, contiguous row-major payload.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np


class ContainerError(Exception):
    pass


def write_tensors(tensors: Mapping[str, np.ndarray], path) -> None:
    """Write float32 tensors with a deterministic byte layout."""
    header: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        data = arr.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(data)],
        }
        chunks.append(data)
        offset += len(data)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in chunks:
            fh.write(chunk)


def read_tensors(path) -> dict[str, np.ndarray]:
    """Read a container written by this module (or any compatible tool)."""
    with open(path, "rb") as fh:
        prefix = fh.read(8)
        if len(prefix) < 8:
            raise ContainerError(f"{path}: too short for a container file")
        (header_len,) = struct.unpack("<Q", prefix)
        blob = fh.read(header_len)
        if len(blob) < header_len:
            raise ContainerError(f"{path}: truncated header")
        payload = fh.read()
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: bad header: {exc}") from exc
    out: dict[str, np.ndarray] = {}
    for name, info in header.items():
        if name == "__metadata__":
            continue
        if info.get("dtype") != "F32":
            raise ContainerError(f"{path}: tensor {name!r} is not F32")
        start, end = info["data_offsets"]
        if end > len(payload):
            raise ContainerError(f"{path}: tensor {name!r} exceeds payload")
        out[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(info["shape"]).copy()
    return out
