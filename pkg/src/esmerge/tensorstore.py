"""Checkpoint container I/O and task-update extraction.

File layout: an 8-byte little-endian unsigned header length, a JSON header
mapping tensor name -> {dtype, shape, data_offsets}, then the contiguous
row-major payload.  This matches the safetensors container, restricted to
32-bit floats.  Loading and saving round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .scaling import LayerRules

_DTYPE_TAG = "F32"
_HEADER_LEN_BYTES = 8
_MAX_HEADER_BYTES = 100 * 1024 * 1024


class ContainerError(Exception):
    """A checkpoint file that cannot be read as a tensor container."""


class MalformedHeaderError(ContainerError):
    pass


class TruncatedPayloadError(ContainerError):
    pass


class UnsupportedDtypeError(ContainerError):
    pass


class DuplicateTensorError(ContainerError):
    pass


class StructureMismatchError(ValueError):
    """Checkpoints that should be structurally identical are not."""


def _as_f32(name: str, array: np.ndarray) -> np.ndarray:
    arr = np.asarray(array)
    if arr.dtype != np.float32:
        raise ValueError(
            f"tensor {name!r} has dtype {arr.dtype}, only float32 is supported"
        )
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


class TensorMap(Mapping[str, np.ndarray]):
    """Immutable named collection of float32 tensors."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, np.ndarray]):
        self._entries = {str(k): _as_f32(k, v) for k, v in entries.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        """Bit-exact equality: same names, shapes, and payload bytes."""
        if not isinstance(other, TensorMap):
            return NotImplemented
        if set(self._entries) != set(other._entries):
            return False
        return all(
            a.shape == other._entries[k].shape
            and a.tobytes() == other._entries[k].tobytes()
            for k, a in self._entries.items()
        )

    def __repr__(self) -> str:
        return f"TensorMap({len(self._entries)} tensors)"


@dataclass(frozen=True)
class TaskUpdate:
    """Per-layer difference expert - base, split by the layer filter.

    matrix_layers holds the 2-D weights selected by the rules; other_params
    holds every remaining tensor's difference.
    """

    matrix_layers: dict[str, np.ndarray]
    other_params: dict[str, np.ndarray]


def load_tensor_map(path) -> TensorMap:
    """Read a container file; raises a distinct error per defect class."""
    with open(path, "rb") as fh:
        prefix = fh.read(_HEADER_LEN_BYTES)
        if len(prefix) < _HEADER_LEN_BYTES:
            raise MalformedHeaderError(f"{path}: file shorter than header-length field")
        (header_len,) = struct.unpack("<Q", prefix)
        if header_len > _MAX_HEADER_BYTES:
            raise MalformedHeaderError(f"{path}: implausible header length {header_len}")
        header_bytes = fh.read(header_len)
        if len(header_bytes) < header_len:
            raise MalformedHeaderError(
                f"{path}: header truncated ({len(header_bytes)} of {header_len} bytes)"
            )
        payload = fh.read()

    def reject_duplicates(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                raise DuplicateTensorError(f"{path}: duplicate tensor name {key!r}")
            seen[key] = value
        return seen

    try:
        header = json.loads(header_bytes.decode("utf-8"), object_pairs_hook=reject_duplicates)
    except DuplicateTensorError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeaderError(f"{path}: header must be a JSON object")

    entries: dict[str, np.ndarray] = {}
    for name, info in header.items():
        if name == "__metadata__":
            continue
        if not isinstance(info, dict):
            raise MalformedHeaderError(f"{path}: entry {name!r} is not an object")
        try:
            dtype = info["dtype"]
            shape = info["shape"]
            start, end = info["data_offsets"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedHeaderError(f"{path}: entry {name!r} missing fields: {exc}") from exc
        if dtype != _DTYPE_TAG:
            raise UnsupportedDtypeError(
                f"{path}: tensor {name!r} has dtype {dtype!r}; only {_DTYPE_TAG} is supported"
            )
        if not isinstance(shape, list) or any(
            not isinstance(d, int) or d < 1 for d in shape
        ):
            raise MalformedHeaderError(f"{path}: tensor {name!r} has invalid shape {shape!r}")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 4
        if not (isinstance(start, int) and isinstance(end, int)) or start < 0 or end < start:
            raise MalformedHeaderError(
                f"{path}: tensor {name!r} has invalid offsets ({start}, {end})"
            )
        if end - start != nbytes:
            raise MalformedHeaderError(
                f"{path}: tensor {name!r} offsets span {end - start} bytes, "
                f"shape needs {nbytes}"
            )
        if end > len(payload):
            raise TruncatedPayloadError(
                f"{path}: tensor {name!r} ends at byte {end}, payload has {len(payload)}"
            )
        arr = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
        arr.setflags(write=False)
        entries[name] = arr
    return TensorMap(entries)


def save_tensor_map(tensors: Mapping[str, np.ndarray], path) -> None:
    """Write a container file; deterministic byte layout (names sorted)."""
    if not isinstance(tensors, TensorMap):
        tensors = TensorMap(tensors)
    header: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        data = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
        header[name] = {
            "dtype": _DTYPE_TAG,
            "shape": list(tensors[name].shape),
            "data_offsets": [offset, offset + len(data)],
        }
        chunks.append(data)
        offset += len(data)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in chunks:
            fh.write(chunk)


def _check_same_structure(base: TensorMap, other: TensorMap, label: str) -> None:
    if set(base) != set(other):
        missing = sorted(set(base) - set(other))
        extra = sorted(set(other) - set(base))
        raise StructureMismatchError(
            f"{label}: tensor name sets differ (missing {missing[:5]}, extra {extra[:5]})"
        )
    for name in base:
        if base[name].shape != other[name].shape:
            raise StructureMismatchError(
                f"{label}: shape mismatch for {name!r}: "
                f"{base[name].shape} vs {other[name].shape}"
            )


def compute_task_update(base: TensorMap, expert: TensorMap, rules: LayerRules) -> TaskUpdate:
    """Difference expert - base, split into matrix layers and the rest."""
    _check_same_structure(base, expert, "expert vs base")
    matrix_layers: dict[str, np.ndarray] = {}
    other_params: dict[str, np.ndarray] = {}
    for name in base:
        delta = expert[name] - base[name]
        delta.setflags(write=False)
        if rules.is_matrix_layer(name, delta.ndim):
            matrix_layers[name] = delta
        else:
            other_params[name] = delta
    return TaskUpdate(matrix_layers=matrix_layers, other_params=other_params)


def average_non_matrix(
    base: TensorMap, updates: Sequence[TaskUpdate]
) -> dict[str, np.ndarray]:
    """base + arithmetic mean of the per-task non-matrix updates."""
    if not updates:
        raise ValueError("average_non_matrix needs at least one task update")
    names = set(updates[0].other_params)
    for i, update in enumerate(updates[1:], start=1):
        if set(update.other_params) != names:
            raise StructureMismatchError(f"update {i}: non-matrix name set differs")
    out: dict[str, np.ndarray] = {}
    for name in names:
        stack = [np.asarray(u.other_params[name], dtype=np.float64) for u in updates]
        if any(s.shape != stack[0].shape for s in stack):
            raise StructureMismatchError(f"non-matrix tensor {name!r} has mismatched shapes")
        mean = np.mean(stack, axis=0)
        out[name] = (base[name].astype(np.float64) + mean).astype(np.float32)
    return out
