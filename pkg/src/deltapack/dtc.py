"""DTC1 checkpoint container.

File layout (all integers little-endian):

    bytes 0..3    magic "DTC1"
    bytes 4..11   u64 header length H
    bytes 12..    header: UTF-8 JSON, H bytes
    ...           zero padding so the payload starts on a 64-byte boundary
    payload       raw float32 tensor bytes

Header JSON: {"metadata": {str: str}, "tensors": {name: {"dtype": "f32",
"shape": [rows, cols], "offset": o, "length": n}}} with keys sorted and no
whitespace, so identical content always serializes to identical bytes.
Offsets are relative to the payload start; tensors are laid out in
lexicographic name order, each starting on a 64-byte boundary.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import CorruptionError, NumericError, ShapeError

MAGIC = b"DTC1"
_ALIGN = 64


def _align(n: int) -> int:
    return (n + _ALIGN - 1) // _ALIGN * _ALIGN


def encode_dtc(tensors: dict[str, np.ndarray], metadata: dict[str, str]) -> bytes:
    entries = {}
    payload_parts = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeError(f"tensor '{name}' must be 2-D, got shape {arr.shape}")
        raw = arr.tobytes()
        pad = _align(offset) - offset
        if pad:
            payload_parts.append(b"\x00" * pad)
            offset += pad
        entries[name] = {"dtype": "f32", "shape": list(arr.shape),
                         "offset": offset, "length": len(raw)}
        payload_parts.append(raw)
        offset += len(raw)
    header = json.dumps({"metadata": {str(k): str(v) for k, v in metadata.items()},
                         "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix_len = len(MAGIC) + 8 + len(header)
    head_pad = _align(prefix_len) - prefix_len
    return b"".join([MAGIC, struct.pack("<Q", len(header)), header,
                     b"\x00" * head_pad, *payload_parts])


def decode_dtc(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptionError("not a DTC1 container")
    (header_len,) = struct.unpack_from("<Q", blob, 4)
    if 12 + header_len > len(blob):
        raise CorruptionError("header length exceeds file size")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"bad container header: {exc}") from exc
    if not isinstance(header, dict) or "tensors" not in header or "metadata" not in header:
        raise CorruptionError("container header missing required keys")
    payload_base = _align(12 + header_len)
    payload = blob[payload_base:]
    tensors: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int]] = []
    for name, info in header["tensors"].items():
        try:
            dtype, shape = info["dtype"], info["shape"]
            offset, length = int(info["offset"]), int(info["length"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptionError(f"bad tensor entry '{name}': {exc}") from exc
        if dtype != "f32":
            raise CorruptionError(f"tensor '{name}' has unsupported dtype '{dtype}'")
        if len(shape) != 2 or any(int(d) < 1 for d in shape):
            raise CorruptionError(f"tensor '{name}' has invalid shape {shape}")
        rows, cols = int(shape[0]), int(shape[1])
        if length != rows * cols * 4:
            raise CorruptionError(f"tensor '{name}' length does not match its shape")
        if offset < 0 or offset + length > len(payload):
            raise CorruptionError(f"tensor '{name}' data out of bounds")
        spans.append((offset, offset + length))
        arr = np.frombuffer(payload, dtype="<f4", count=rows * cols,
                            offset=offset).reshape(rows, cols).astype(np.float32)
        if not np.isfinite(arr).all():
            raise NumericError(f"tensor '{name}' contains NaN or Inf")
        arr.setflags(write=False)
        tensors[name] = arr
    spans.sort()
    for (_, prev_end), (start, _) in zip(spans, spans[1:]):
        if start < prev_end:
            raise CorruptionError("tensor data ranges overlap")
    metadata = {str(k): str(v) for k, v in header["metadata"].items()}
    return tensors, metadata


def atomic_write(path: str, blob: bytes) -> None:
    """Write once via a temp file and rename, keeping outputs all-or-nothing."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dtc(path: str, tensors: dict[str, np.ndarray], metadata: dict[str, str]) -> None:
    atomic_write(path, encode_dtc(tensors, metadata))


def read_dtc(path: str) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        return decode_dtc(fh.read())
