"""Per-tensor uniform quantization of sparse deltas, with value-range
decomposition into m parts.

The quantizer maps the stored values of a CSR matrix to k-bit codes:

    code = clip(round(v / s) + z, 0, 2^k - 1)
    s    = (max - min) / (2^k - 1)        over stored values only
    z    = clip(round(-min / s), 0, 2^k - 1)

Rounding is half-to-even throughout.  Decomposition then splits the code range
{0..2^k-1} into m contiguous parts of 2^k/m codes each; part j (1-based) keeps
codes in [lo_j, lo_j + 2^k/m - 1] shifted down by lo_j, so every part packs
into k - log2(m) bits.  Dequantization undoes the shift before applying the
affine map, hence decomposing is exactly neutral:

    dequant = s * (shifted - z - offset_j),  offset_j = -lo_j

Degenerate tensors (all stored values equal) use the sentinel s = 0 and carry
the constant out of band.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .bitpack import pack_bits, packed_size, unpack_bits
from .errors import (CorruptionError, DegenerateInputError, NumericError,
                     ParameterError)
from .tensor import CsrMatrix, csr_from_entries


def _check_k(k: int) -> None:
    if not 1 <= k <= 8:
        raise ParameterError(f"bit width k must be in 1..8, got {k}")


def _check_m(k: int, m: int) -> None:
    if m < 1 or (m & (m - 1)) != 0:
        raise ParameterError(f"part count m must be a power of two >= 1, got {m}")
    if m > (1 << k):
        raise ParameterError(f"part count m={m} exceeds 2^k={1 << k}")


@dataclass(frozen=True)
class QuantParams:
    k: int
    m: int
    s: float          # scale, value of a float32
    z: int            # zero point in [0, 2^k - 1]
    degenerate: bool = False
    constant: float = 0.0  # dequantized value when degenerate

    def __post_init__(self):
        _check_k(self.k)
        _check_m(self.k, self.m)
        if not 0 <= self.z < (1 << self.k):
            raise ParameterError(f"zero point {self.z} out of range for k={self.k}")
        if self.s < 0:
            raise ParameterError("scale must be non-negative")

    @property
    def part_width(self) -> int:
        """Bits per stored code after decomposition: k - log2(m)."""
        return self.k - (self.m.bit_length() - 1)

    @property
    def codes_per_part(self) -> int:
        return (1 << self.k) // self.m

    def part_range(self, j: int) -> tuple[int, int]:
        """Inclusive code range of part j in 1..m."""
        lo = self.codes_per_part * (j - 1)
        return lo, self.codes_per_part * j - 1

    def offset(self, j: int) -> int:
        return -self.part_range(j)[0]


@dataclass(frozen=True)
class CsrCodes:
    """Sparse integer codes sharing CSR structure with the quantized matrix."""

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    codes: np.ndarray  # int64 in [0, 2^k - 1]

    def __post_init__(self):
        for name in ("row_offsets", "col_indices", "codes"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if len(self.col_indices) != len(self.codes):
            raise ParameterError("codes and col_indices length mismatch")

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.row_offsets))


@dataclass(frozen=True)
class QuantPart:
    row_offsets: np.ndarray  # int64, rows + 1
    col_indices: np.ndarray  # int64, nnz
    packed: bytes            # shifted codes at part_width bits
    nnz: int


@dataclass(frozen=True)
class QuantizedDelta:
    rows: int
    cols: int
    params: QuantParams
    parts: tuple[QuantPart, ...]

    def __post_init__(self):
        if len(self.parts) != self.params.m:
            raise ParameterError("part count does not match params.m")
        width = self.params.part_width
        for part in self.parts:
            if len(part.packed) != packed_size(part.nnz, width):
                raise CorruptionError("packed code length mismatch")

    @property
    def nnz(self) -> int:
        return sum(part.nnz for part in self.parts)


def quantize(sparse_delta: CsrMatrix, k: int) -> tuple[CsrCodes, QuantParams]:
    """Quantize stored values to k-bit codes; returns codes plus params (m=1)."""
    _check_k(k)
    if sparse_delta.nnz == 0:
        raise DegenerateInputError("cannot quantize an empty sparse matrix")
    v = sparse_delta.values
    if not np.isfinite(v).all():
        raise NumericError("cannot quantize non-finite values")
    vmin = float(v.min())
    vmax = float(v.max())
    qmax = (1 << k) - 1
    if vmax == vmin:
        codes = np.zeros(sparse_delta.nnz, dtype=np.int64)
        params = QuantParams(k=k, m=1, s=0.0, z=0, degenerate=True, constant=vmin)
    else:
        s = float(np.float32((vmax - vmin) / qmax))
        z = int(np.clip(np.rint(-vmin / s), 0, qmax))
        raw = np.rint(v.astype(np.float64) / s).astype(np.int64) + z
        codes = np.clip(raw, 0, qmax)
        params = QuantParams(k=k, m=1, s=s, z=z)
    return (CsrCodes(sparse_delta.rows, sparse_delta.cols, sparse_delta.row_offsets,
                     sparse_delta.col_indices, codes),
            params)


def decompose(codes: CsrCodes, params: QuantParams, m: int | None = None) -> QuantizedDelta:
    """Split codes into m value-range parts with offsets, bit-packing each part."""
    if m is None:
        m = params.m
    _check_m(params.k, m)
    params = replace(params, m=m)
    step = params.codes_per_part
    width = params.part_width
    row_ids = codes.row_ids()
    part_of = codes.codes // step if codes.nnz else np.zeros(0, dtype=np.int64)
    if codes.nnz and (part_of.min() < 0 or part_of.max() >= m):
        raise CorruptionError("code outside the k-bit range")
    parts = []
    for j0 in range(m):
        sel = part_of == j0
        rows_j = row_ids[sel]
        counts = np.bincount(rows_j, minlength=codes.rows)
        offsets = np.zeros(codes.rows + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        shifted = codes.codes[sel] - j0 * step
        parts.append(QuantPart(row_offsets=offsets,
                               col_indices=codes.col_indices[sel].copy(),
                               packed=pack_bits(shifted, width),
                               nnz=int(sel.sum())))
    return QuantizedDelta(codes.rows, codes.cols, params, tuple(parts))


def _affine_dequant(code_minus_z: np.ndarray, params: QuantParams) -> np.ndarray:
    if params.degenerate:
        return np.full(len(code_minus_z), np.float32(params.constant), dtype=np.float32)
    return (np.float64(params.s) * code_minus_z).astype(np.float32)


def dequantize_codes(codes: CsrCodes, params: QuantParams) -> CsrMatrix:
    """Dequantize without decomposition: value = s * (code - z)."""
    vals = _affine_dequant(codes.codes - params.z, params)
    return csr_from_entries(codes.rows, codes.cols, codes.row_ids(), codes.col_indices, vals)


def dequantize(q: QuantizedDelta) -> CsrMatrix:
    """Merge parts and dequantize; bit-identical to the undecomposed path."""
    params = q.params
    step = params.codes_per_part
    rows_all = []
    cols_all = []
    codes_all = []
    for j0, part in enumerate(q.parts):
        shifted = unpack_bits(part.packed, params.part_width, part.nnz)
        rows_all.append(np.repeat(np.arange(q.rows, dtype=np.int64), np.diff(part.row_offsets)))
        cols_all.append(part.col_indices)
        codes_all.append(shifted + j0 * step)
    rr = np.concatenate(rows_all) if rows_all else np.zeros(0, dtype=np.int64)
    cc = np.concatenate(cols_all) if cols_all else np.zeros(0, dtype=np.int64)
    code = np.concatenate(codes_all) if codes_all else np.zeros(0, dtype=np.int64)
    order = np.lexsort((cc, rr))
    rr, cc, code = rr[order], cc[order], code[order]
    if len(rr) > 1 and np.any((np.diff(rr) == 0) & (np.diff(cc) == 0)):
        raise CorruptionError("parts store overlapping positions")
    vals = _affine_dequant(code - params.z, params)
    return csr_from_entries(q.rows, q.cols, rr, cc, vals)


def nominal_ratio(alpha1, k: int, m: int) -> Fraction:
    """Headline compression ratio alpha1 * 16 / (k - log2 m).

    Excludes index and offset overhead by design; the measured ratio in
    reports accounts for those.  Requires at least one bit per stored code.
    Accepts any k >= 1 (the storage formula is meaningful beyond the 1..8
    range the quantizer itself supports).
    """
    if k < 1:
        raise ParameterError(f"bit width k must be >= 1, got {k}")
    if m < 1 or (m & (m - 1)) != 0 or m > (1 << k):
        raise ParameterError(f"part count m={m} must be a power of two in 1..2^k")
    width = k - (m.bit_length() - 1)
    if width < 1:
        raise ParameterError(
            f"k - log2(m) must be >= 1 (got k={k}, m={m}); the one-value-per-part "
            "limit is reported separately")
    alpha1 = Fraction(alpha1)
    if alpha1 < 1:
        raise ParameterError("alpha1 must be >= 1")
    return alpha1 * 16 / width
