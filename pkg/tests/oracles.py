"""Independent reference implementations used to derive expected test values.

These deliberately avoid the library's code paths: plain loops, cumsum for
sequential float64 accumulation, and explicit formula transcriptions.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1


def matmul_oracle(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x @ w^T with sequential ascending-k float64 accumulation per element."""
    x64 = np.asarray(x, dtype=np.float64)
    w64 = np.asarray(w, dtype=np.float64)
    t, h_in = x64.shape
    h_out = w64.shape[0]
    out = np.empty((t, h_out), dtype=np.float32)
    for p in range(t):
        for q in range(h_out):
            prods = x64[p] * w64[q]
            out[p, q] = np.float32(np.cumsum(prods)[-1]) if h_in else np.float32(0.0)
    return out


def csr_oracle(w: np.ndarray):
    """(row_offsets, col_indices, values) of the nonzero entries, by loops."""
    offsets = [0]
    cols = []
    vals = []
    for row in np.asarray(w, dtype=np.float32):
        for c, v in enumerate(row):
            if v != 0.0:
                cols.append(c)
                vals.append(v)
        offsets.append(len(cols))
    return offsets, cols, vals


def quantize_oracle(values: np.ndarray, k: int):
    """Uniform quantizer transcription: returns (codes, s, z, dequant)."""
    v = np.asarray(values, dtype=np.float32)
    vmin = float(v.min())
    vmax = float(v.max())
    qmax = 2 ** k - 1
    if vmax == vmin:
        codes = [0] * len(v)
        return codes, 0.0, 0, [vmin] * len(v)
    s = float(np.float32((vmax - vmin) / qmax))
    z = int(min(max(_round_half_even(-vmin / s), 0), qmax))
    codes = []
    deq = []
    for x in v:
        c = _round_half_even(float(x) / s) + z
        c = min(max(c, 0), qmax)
        codes.append(c)
        deq.append(float(np.float32(np.float64(s) * (c - z))))
    return codes, s, z, deq


def _round_half_even(x: float) -> int:
    lo = math.floor(x)
    frac = x - lo
    if frac > 0.5:
        return lo + 1
    if frac < 0.5:
        return lo
    return lo if lo % 2 == 0 else lo + 1


def pack_oracle(values, width: int) -> bytes:
    """LSB-first bit packing via one big integer."""
    acc = 0
    for i, v in enumerate(values):
        acc |= int(v) << (i * width)
    n_bytes = (len(values) * width + 7) // 8
    return acc.to_bytes(n_bytes, "little") if n_bytes else b""


def splitmix_oracle(state: int):
    """Generator of the SplitMix64 stream starting at `state`."""
    while True:
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield z ^ (z >> 31)


def fnv_oracle(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def fisher_yates_oracle(state: int, n: int) -> list[int]:
    gen = splitmix_oracle(state)
    pos = list(range(n))
    for i in range(n - 1, 0, -1):
        j = next(gen) % (i + 1)
        pos[i], pos[j] = pos[j], pos[i]
    return pos


def proxy_error_oracle(x, wb_q, dq, comp_q_dense, wb_k, dk, comp_k_dense) -> float:
    """Attention-score error with compressed deltas supplied densified."""
    q = matmul_oracle(x, wb_q) + matmul_oracle(x, dq)
    k = matmul_oracle(x, wb_k) + matmul_oracle(x, dk)
    q_hat = matmul_oracle(x, wb_q) + matmul_oracle(x, comp_q_dense)
    k_hat = matmul_oracle(x, wb_k) + matmul_oracle(x, comp_k_dense)
    scores = matmul_oracle(q, k).astype(np.float64)
    scores_hat = matmul_oracle(q_hat, k_hat).astype(np.float64)
    return float(np.sum((scores - scores_hat) ** 2))


def sign_test_p(wins: int, n: int) -> float:
    """One-sided exact binomial tail P[Bin(n, 1/2) >= wins]."""
    return sum(math.comb(n, i) for i in range(wins, n + 1)) / 2.0 ** n
