"""Dense and CSR sparse matrices with reproducible matrix products.

A dense matrix is a 2-D C-contiguous float32 ndarray.  All products accumulate
in float64 with a fixed ascending-k term order and round once to float32, so
the sparse product over stored entries and the dense product over all entries
agree elementwise whenever the dropped entries are exact zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, StructuralError

DenseMatrix = np.ndarray  # 2-D float32, C order


def dense(data, copy: bool = True) -> np.ndarray:
    """Validate and freeze a 2-D float32 matrix."""
    if copy:
        arr = np.array(data, dtype=np.float32, order="C")
    else:
        arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeError(f"dense matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"dense matrix needs at least one row and column, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CsrMatrix:
    """Compressed sparse row matrix: row offsets, column indices, values.

    Stored zeros are permitted (quantized codes may dequantize to zero), but
    constructors that sparsify dense data drop exact zeros.
    """

    rows: int
    cols: int
    row_offsets: np.ndarray  # int64, length rows + 1
    col_indices: np.ndarray  # int64, length nnz
    values: np.ndarray       # float32, length nnz

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.rows < 1 or self.cols < 1:
            raise ShapeError(f"CSR needs at least one row and column, got {self.rows}x{self.cols}")
        if ro.shape != (self.rows + 1,):
            raise StructuralError("row_offsets length must be rows + 1")
        if ro[0] != 0 or ro[-1] != len(ci):
            raise StructuralError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(ro) < 0):
            raise StructuralError("row_offsets must be non-decreasing")
        if len(ci) != len(vals):
            raise StructuralError("col_indices and values must have equal length")
        if len(ci) > 0:
            if ci.min() < 0 or ci.max() >= self.cols:
                raise StructuralError("column index out of range")
            row_ids = np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(ro))
            same_row = row_ids[1:] == row_ids[:-1]
            if np.any(np.diff(ci)[same_row] <= 0):
                raise StructuralError("column indices must strictly increase within each row")
        for arr in (ro, ci, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", vals)

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.row_offsets))


def csr_from_entries(rows: int, cols: int, row_ids: np.ndarray, col_ids: np.ndarray,
                     values: np.ndarray) -> CsrMatrix:
    """Build a CsrMatrix from entry coordinates already sorted row-major."""
    counts = np.bincount(row_ids, minlength=rows) if len(row_ids) else np.zeros(rows, dtype=np.int64)
    offsets = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return CsrMatrix(rows, cols, offsets, np.asarray(col_ids, dtype=np.int64),
                     np.asarray(values, dtype=np.float32))


def to_csr(w: np.ndarray) -> CsrMatrix:
    """Sparsify a dense matrix, dropping exact zeros."""
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 2:
        raise ShapeError(f"to_csr expects a 2-D matrix, got shape {w.shape}")
    rr, cc = np.nonzero(w)
    return csr_from_entries(w.shape[0], w.shape[1], rr.astype(np.int64), cc.astype(np.int64), w[rr, cc])


def densify(s: CsrMatrix) -> np.ndarray:
    out = np.zeros((s.rows, s.cols), dtype=np.float32)
    if s.nnz:
        out[s.row_ids(), s.col_indices] = s.values
    return out


def _check_product_shapes(x: np.ndarray, w_rows: int, w_cols: int) -> None:
    if x.ndim != 2:
        raise ShapeError(f"input must be 2-D, got shape {x.shape}")
    if x.shape[1] != w_cols:
        raise ShapeError(f"inner dimensions differ: input has {x.shape[1]} columns, "
                         f"weight has {w_cols}")


def matmul_dense(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """out[p, q] = sum_k x[p, k] * w[q, k], float64 accumulation in ascending k."""
    w = np.asarray(w, dtype=np.float32)
    if w.ndim != 2:
        raise ShapeError(f"weight must be 2-D, got shape {w.shape}")
    _check_product_shapes(x, w.shape[0], w.shape[1])
    x64 = np.asarray(x, dtype=np.float64)
    w64 = w.astype(np.float64)
    acc = np.zeros((x.shape[0], w.shape[0]), dtype=np.float64)
    for k in range(x.shape[1]):
        acc += np.multiply.outer(x64[:, k], w64[:, k])
    return acc.astype(np.float32)


def matmul_sparse(x: np.ndarray, s: CsrMatrix) -> np.ndarray:
    """Same contract as matmul_dense on the densified matrix.

    Accumulates stored entries per output row in ascending column order, which
    matches the dense path's ascending-k order on the shared nonzero terms.
    """
    _check_product_shapes(x, s.rows, s.cols)
    x64 = np.asarray(x, dtype=np.float64)
    acc = np.zeros((x.shape[0], s.rows), dtype=np.float64)
    ro = s.row_offsets
    ci = s.col_indices
    v64 = s.values.astype(np.float64)
    for q in range(s.rows):
        col = acc[:, q]
        for idx in range(ro[q], ro[q + 1]):
            col += x64[:, ci[idx]] * v64[idx]
    return acc.astype(np.float32)
