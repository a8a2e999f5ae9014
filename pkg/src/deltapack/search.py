"""Group-size selection by first-layer attention proxy error.

Running compressed weights through a whole model to pick the group size is
expensive; the proxy instead compares the first attention layer's score matrix
Q1 @ K1^T before and after compressing just the query/key projection deltas.
Candidate group sizes are {alpha * 2^i} intersected with the divisors of the
row width, plus the full row, and the candidate with the smallest squared
Frobenius error wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import rng
from .checkpoint import DeltaCheckpoint, ModelCheckpoint
from .dropout import DropoutMode, DropoutPlan, apply_dropout
from .errors import ParameterError, ShapeError, StructuralError
from .tensor import CsrMatrix, dense, matmul_dense, matmul_sparse


@dataclass
class AttentionProbe:
    """First-layer query/key names plus calibration inputs (t x h_in)."""

    wq_name: str
    wk_name: str
    calib: np.ndarray

    def __post_init__(self):
        self.calib = dense(self.calib, copy=False)


@dataclass(frozen=True)
class SearchResult:
    candidates: tuple[tuple[int, float], ...]
    best: int
    seed: int


def candidate_group_sizes(alpha, h_in: int) -> list[int]:
    """Candidate set {alpha * 2^i} limited to divisors of h_in, plus h_in."""
    alpha = Fraction(alpha)
    if alpha < 2 or alpha.denominator != 1:
        raise ParameterError(f"group-size search needs an integral alpha >= 2, got {alpha}")
    a = int(alpha)
    if a > h_in:
        raise ParameterError(f"alpha {a} exceeds row width {h_in}: no candidates")
    out = []
    g = a
    while g < h_in:
        if h_in % g == 0:
            out.append(g)
        g *= 2
    out.append(h_in)
    return out


def _layer(ckpt, name: str, kind: str) -> np.ndarray:
    try:
        return ckpt.tensors[name]
    except KeyError:
        raise StructuralError(f"probe layer '{name}' missing from {kind}") from None


def proxy_error(base: ModelCheckpoint, delta: DeltaCheckpoint,
                compressed_delta: Mapping[str, CsrMatrix], probe: AttentionProbe) -> float:
    """Squared Frobenius error of the attention scores under compression.

    Both sides use the separate-computation scheme (base product plus delta
    product), so a compressed delta identical to the original yields exactly
    zero.
    """
    x = probe.calib
    q_err = []
    for name in (probe.wq_name, probe.wk_name):
        wb = _layer(base, name, "base checkpoint")
        dw = _layer(delta, name, "delta checkpoint")
        if name not in compressed_delta:
            raise StructuralError(f"probe layer '{name}' missing from compressed delta")
        comp = compressed_delta[name]
        if x.shape[1] != wb.shape[1]:
            raise ShapeError(f"calibration inputs have {x.shape[1]} columns, "
                             f"layer '{name}' expects {wb.shape[1]}")
        base_prod = matmul_dense(x, wb)
        q_err.append((base_prod + matmul_dense(x, dw),
                      base_prod + matmul_sparse(x, comp)))
    (q, q_hat), (kk, kk_hat) = q_err
    scores = matmul_dense(q, kk)
    scores_hat = matmul_dense(q_hat, kk_hat)
    diff = scores.astype(np.float64) - scores_hat.astype(np.float64)
    return float(np.sum(diff * diff))


def subsample_rows(x: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """First ceil(fraction * t) rows of a seeded shuffle of x's rows."""
    if not 0 < fraction <= 1:
        raise ParameterError(f"calibration fraction must be in (0, 1], got {fraction}")
    t = x.shape[0]
    count = min(t, math.ceil(fraction * t))
    order = rng.shuffled_positions((seed ^ rng.fnv1a64("calibration")) & rng.MASK64, t)
    picked = np.asarray(order[:count], dtype=np.int64)
    return np.ascontiguousarray(x[picked])


def search_group_size(base: ModelCheckpoint, delta: DeltaCheckpoint, probe: AttentionProbe,
                      alpha, seed: int, calib_fraction: float = 1.0) -> SearchResult:
    """Evaluate every candidate group size on the probe layers, same seed for
    each so differences reflect grouping rather than mask luck.  Ties break
    toward the larger group size."""
    alpha = Fraction(alpha)
    wq = _layer(delta, probe.wq_name, "delta checkpoint")
    candidates = candidate_group_sizes(alpha, wq.shape[1])
    x = subsample_rows(probe.calib, calib_fraction, seed)
    sub_probe = AttentionProbe(probe.wq_name, probe.wk_name, x)
    scored: list[tuple[int, float]] = []
    best_hg = candidates[0]
    best_err = math.inf
    for h_g in candidates:
        plan = DropoutPlan(alpha=alpha, group_size=h_g, seed=seed, mode=DropoutMode.GROUP_WISE)
        compressed = {name: apply_dropout(delta.tensors[name], plan, name)
                      for name in (probe.wq_name, probe.wk_name)}
        err = proxy_error(base, delta, compressed, sub_probe)
        scored.append((h_g, err))
        if err <= best_err:
            best_err = err
            best_hg = h_g
    return SearchResult(candidates=tuple(scored), best=best_hg, seed=seed)
