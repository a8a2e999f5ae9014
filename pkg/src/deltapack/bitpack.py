"""Fixed-width packing of small unsigned integers into bytes.

Layout is normative for the artifact file format: codes are laid down in
order, each occupying `width` consecutive bits, LSB-first within little-endian
bytes.  Code 0 of width 3 therefore lands in bits 0..2 of byte 0, code 1 in
bits 3..5, and so on.  The final byte is zero-padded.
"""

from __future__ import annotations

import numpy as np

from .errors import CorruptionError, ParameterError


def packed_size(count: int, width: int) -> int:
    """Bytes needed for `count` codes of `width` bits."""
    return (count * width + 7) // 8


def pack_bits(values: np.ndarray, width: int) -> bytes:
    """Pack unsigned integers < 2**width; width 0 packs to no bytes."""
    if not 0 <= width <= 8:
        raise ParameterError(f"pack width must be in 0..8, got {width}")
    values = np.asarray(values, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() >= (1 << width)):
        raise ParameterError(f"value out of range for {width}-bit packing")
    if width == 0 or values.size == 0:
        return b""
    bits = ((values[:, None] >> np.arange(width, dtype=np.int64)) & 1).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def unpack_bits(data: bytes, width: int, count: int) -> np.ndarray:
    """Inverse of pack_bits; returns int64 codes."""
    if not 0 <= width <= 8:
        raise ParameterError(f"pack width must be in 0..8, got {width}")
    if count < 0:
        raise ParameterError("count must be non-negative")
    if len(data) != packed_size(count, width):
        raise CorruptionError(
            f"packed data is {len(data)} bytes, expected {packed_size(count, width)} "
            f"for {count} codes of width {width}")
    if width == 0 or count == 0:
        return np.zeros(count, dtype=np.int64)
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
    used = bits[:count * width].reshape(count, width).astype(np.int64)
    if np.any(bits[count * width:]):
        raise CorruptionError("nonzero padding bits in packed data")
    return (used << np.arange(width, dtype=np.int64)).sum(axis=1)
