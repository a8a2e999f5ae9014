"""Row-wise and group-wise dropout for delta weights.

Each weight row is cut into groups of `group_size` columns.  Within every
group an exact fraction of entries survives: keep = round-half-even(g / alpha)
for a group of length g.  Survivors are chosen uniformly without replacement
from the group's own deterministic stream and scaled by alpha, which makes the
compressed matrix an unbiased estimator of the original.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import rng
from .errors import ParameterError
from .tensor import CsrMatrix, csr_from_entries

FULL_ROW = None  # group_size sentinel: one group spanning the whole row


class DropoutMode(enum.Enum):
    ROW_WISE = "row"
    GROUP_WISE = "group"


def as_alpha(value) -> Fraction:
    """Coerce a compression ratio to an exact Fraction >= 1."""
    alpha = Fraction(value)
    if alpha < 1:
        raise ParameterError(f"compression ratio must be >= 1, got {alpha}")
    return alpha


@dataclass(frozen=True)
class DropoutPlan:
    alpha: Fraction
    group_size: int | None = FULL_ROW
    seed: int = 0
    mode: DropoutMode = DropoutMode.GROUP_WISE

    def __post_init__(self):
        object.__setattr__(self, "alpha", as_alpha(self.alpha))
        if self.group_size is not None and self.group_size < 1:
            raise ParameterError(f"group size must be positive, got {self.group_size}")
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError("seed must fit in 64 unsigned bits")

    def effective_group_size(self, cols: int) -> int:
        if self.mode is DropoutMode.ROW_WISE or self.group_size is None:
            return cols
        return self.group_size


def keep_count(group_len: int, alpha: Fraction) -> int:
    """Survivors per group: round-half-even of group_len / alpha."""
    return round(Fraction(group_len) / alpha)


@dataclass(frozen=True)
class MaskMatrix:
    rows: int
    cols: int
    keep: np.ndarray  # bool, shape (rows, cols); True = survivor

    def __post_init__(self):
        if self.keep.shape != (self.rows, self.cols):
            raise ParameterError("mask shape mismatch")
        self.keep.setflags(write=False)


def _fill_groups(bits: np.ndarray, plan: DropoutPlan, layer_name: str,
                 group_len: int, group_index_of: np.ndarray, col_base_of: np.ndarray,
                 row_of: np.ndarray) -> None:
    """Set survivor bits for a batch of same-length groups."""
    keep = keep_count(group_len, plan.alpha)
    if keep <= 0:
        return
    cols = bits.shape[1]
    if keep >= group_len:
        for r, b in zip(row_of, col_base_of):
            bits[r, b:b + group_len] = True
        return
    base = (plan.seed ^ rng.fnv1a64(layer_name)) & rng.MASK64
    states = (np.uint64(base)
              ^ (row_of.astype(np.uint64) * np.uint64(rng.GOLDEN))
              ^ group_index_of.astype(np.uint64))
    pos = rng.batch_shuffle(states, group_len)[:, :keep]
    flat = (row_of[:, None] * cols + col_base_of[:, None] + pos).ravel()
    bits.flat[flat] = True


def make_mask(rows: int, cols: int, plan: DropoutPlan, layer_name: str) -> MaskMatrix:
    """Deterministic survivor mask for a rows x cols layer.

    Row-wise mode and group-wise mode with group_size == cols derive identical
    per-group streams (single group index 0 per row), so their masks match bit
    for bit.
    """
    if rows < 1 or cols < 1:
        raise ParameterError("mask needs at least one row and column")
    g = plan.effective_group_size(cols)
    bits = np.zeros((rows, cols), dtype=bool)
    n_full, rem = divmod(cols, g)
    if n_full:
        row_of = np.repeat(np.arange(rows, dtype=np.int64), n_full)
        group_of = np.tile(np.arange(n_full, dtype=np.int64), rows)
        _fill_groups(bits, plan, layer_name, g, group_of, group_of * g, row_of)
    if rem:
        row_of = np.arange(rows, dtype=np.int64)
        group_of = np.full(rows, n_full, dtype=np.int64)
        _fill_groups(bits, plan, layer_name, rem, group_of, group_of * g, row_of)
    return MaskMatrix(rows, cols, bits)


def apply_dropout(delta: np.ndarray, plan: DropoutPlan, layer_name: str) -> CsrMatrix:
    """Mask a delta layer and rescale survivors by alpha (one float32 multiply).

    Survivors whose value is exactly zero are left out of the CSR result, the
    same policy as to_csr: a stored zero and an absent entry reconstruct
    identically.
    """
    delta = np.asarray(delta, dtype=np.float32)
    mask = make_mask(delta.shape[0], delta.shape[1], plan, layer_name)
    scale = np.float32(float(plan.alpha))
    kept = mask.keep & (delta != 0.0)
    rr, cc = np.nonzero(kept)
    values = delta[rr, cc] * scale
    return csr_from_entries(delta.shape[0], delta.shape[1],
                            rr.astype(np.int64), cc.astype(np.int64), values)
