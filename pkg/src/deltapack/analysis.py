"""Distribution statistics, layer-wise loss, baseline compressors, reporting.

The per-output-element statistics quantify why delta weights tolerate random
dropping: for each output element a[p, q] = sum_k x[p, k] * w[q, k], the
intermediate products of a delta weight have far smaller variance and min-max
range than those of the full fine-tuned weight.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import rng
from .dqfile import DqArtifact, encode_dq, payload_sizes
from .dropout import as_alpha
from .errors import ShapeError, StructuralError
from .quant import QuantizedDelta, dequantize, nominal_ratio
from .tensor import CsrMatrix, csr_from_entries, matmul_dense, matmul_sparse

# serialized per-layer quantizer parameters: s (f32), z (u32), constant (f32)
_PARAM_BYTES = 12


@dataclass(frozen=True)
class IntermediateStats:
    variance: np.ndarray     # float32, t x h_out, population variance over k
    value_range: np.ndarray  # float32, t x h_out, max - min over k


def intermediate_stats(x: np.ndarray, w: np.ndarray) -> IntermediateStats:
    """Variance and range of the products x[p, k] * w[q, k] over k."""
    x = np.asarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"incompatible shapes {x.shape} and {w.shape}")
    t = x.shape[0]
    var = np.empty((t, w.shape[0]), dtype=np.float32)
    rng_ = np.empty((t, w.shape[0]), dtype=np.float32)
    w64 = w.astype(np.float64)
    # chunk rows of x to bound the (rows, h_out, h_in) product tensor
    chunk = max(1, (1 << 24) // max(1, w.shape[0] * w.shape[1]))
    for start in range(0, t, chunk):
        block = x[start:start + chunk].astype(np.float64)
        prods = block[:, None, :] * w64[None, :, :]
        var[start:start + chunk] = prods.var(axis=2).astype(np.float32)
        rng_[start:start + chunk] = (prods.max(axis=2) - prods.min(axis=2)).astype(np.float32)
    return IntermediateStats(variance=var, value_range=rng_)


def layer_loss(x: np.ndarray, w: np.ndarray, w_hat_sparse: CsrMatrix,
               w_base: np.ndarray | None = None) -> float:
    """Squared Frobenius norm of x @ w^T minus x @ w_hat^T.

    When a base weight is supplied, both sides add the same base product; this
    cancels analytically and nearly so in float32.
    """
    a = matmul_dense(x, w)
    a_hat = matmul_sparse(x, w_hat_sparse)
    if w_base is not None:
        base_prod = matmul_dense(x, w_base)
        a = base_prod + a
        a_hat = base_prod + a_hat
    diff = a.astype(np.float64) - a_hat.astype(np.float64)
    return float(np.sum(diff * diff))


def magnitude_prune(delta: np.ndarray, alpha) -> CsrMatrix:
    """Keep the ceil(numel / alpha) largest-magnitude entries, no rescaling.

    Ties break by (row, col) ascending, so the result is a pure function of
    the inputs.
    """
    alpha = as_alpha(alpha)
    delta = np.asarray(delta, dtype=np.float32)
    rows, cols = delta.shape
    numel = rows * cols
    keep = math.ceil(Fraction(numel) / alpha)
    flat_rows = np.repeat(np.arange(rows, dtype=np.int64), cols)
    flat_cols = np.tile(np.arange(cols, dtype=np.int64), rows)
    order = np.lexsort((flat_cols, flat_rows, -np.abs(delta.ravel().astype(np.float64))))
    picked = order[:keep]
    rr, cc = flat_rows[picked], flat_cols[picked]
    resort = np.lexsort((cc, rr))
    rr, cc = rr[resort], cc[resort]
    return csr_from_entries(rows, cols, rr, cc, delta[rr, cc])


def global_dropout(delta: np.ndarray, alpha, seed: int, layer_name: str = "") -> CsrMatrix:
    """Exact-fraction random keep over the flattened tensor, rescaled by alpha.

    Uses the group-dropout stream discipline with a single group (row 0,
    group 0) spanning the whole tensor.
    """
    alpha = as_alpha(alpha)
    delta = np.asarray(delta, dtype=np.float32)
    rows, cols = delta.shape
    numel = rows * cols
    keep = round(Fraction(numel) / alpha)
    mask = np.zeros(numel, dtype=bool)
    if keep >= numel:
        mask[:] = True
    elif keep > 0:
        order = rng.shuffled_positions(rng.derive_state(seed, layer_name, 0, 0), numel)
        mask[np.asarray(order[:keep], dtype=np.int64)] = True
    kept = mask.reshape(rows, cols) & (delta != 0.0)
    rr, cc = np.nonzero(kept)
    values = delta[rr, cc] * np.float32(float(alpha))
    return csr_from_entries(rows, cols, rr.astype(np.int64), cc.astype(np.int64), values)


@dataclass
class LayerReport:
    name: str
    rows: int
    cols: int
    stored: int
    sparsity: float
    keep_fraction: float
    k: int | None
    m: int | None
    nominal_ratio: float | None
    measured_ratio: float
    payload_bytes: int
    loss: float | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "rows": self.rows, "cols": self.cols,
                "stored": self.stored, "sparsity": self.sparsity,
                "keep_fraction": self.keep_fraction, "k": self.k, "m": self.m,
                "nominal_ratio": self.nominal_ratio, "measured_ratio": self.measured_ratio,
                "payload_bytes": self.payload_bytes, "loss": self.loss}


@dataclass
class CompressionReport:
    config: dict
    layers: list[LayerReport]
    totals: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "layers": [l.to_dict() for l in self.layers],
                "totals": self.totals}

    def to_json(self) -> str:
        """Deterministic key-sorted JSON with round-trip-exact floats."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_rows(self) -> list[str]:
        cols = ["name", "rows", "cols", "stored", "sparsity", "keep_fraction",
                "k", "m", "nominal_ratio", "measured_ratio", "payload_bytes", "loss"]
        out = [",".join(cols)]
        for layer in self.layers:
            d = layer.to_dict()
            out.append(",".join("" if d[c] is None else repr(d[c]) if isinstance(d[c], float)
                                else str(d[c]) for c in cols))
        return out

    def summary_lines(self) -> list[str]:
        lines = [f"method={self.config['method']} alpha={self.config['alpha']} "
                 f"group_size={self.config['group_size']} k={self.config['k']} "
                 f"m={self.config['m']} seed={self.config['seed']}"]
        for layer in self.layers:
            loss = "n/a" if layer.loss is None else f"{layer.loss:.6g}"
            nominal = "n/a" if layer.nominal_ratio is None else f"{layer.nominal_ratio:g}"
            lines.append(f"  {layer.name}: {layer.rows}x{layer.cols} stored={layer.stored} "
                         f"sparsity={layer.sparsity:.4f} nominal_ratio={nominal} "
                         f"measured_ratio={layer.measured_ratio:.3f} loss={loss}")
        t = self.totals
        nominal = "n/a" if t["nominal_ratio"] is None else f"{t['nominal_ratio']:g}"
        lines.append(f"total: stored={t['stored']}/{t['numel']} file_bytes={t['file_bytes']} "
                     f"nominal_ratio={nominal} measured_ratio={t['measured_ratio']:.3f}")
        return lines


def build_report(artifact: DqArtifact, *, eval_inputs: np.ndarray | None = None,
                 delta_tensors: dict[str, np.ndarray] | None = None) -> CompressionReport:
    """Assemble the compression report from an artifact.

    Byte accounting comes from the actual serialized encoding.  Layer losses
    are filled only when both calibration inputs and the uncompressed delta
    are available.
    """
    cfg = artifact.config
    sizes = payload_sizes(artifact)
    blob = encode_dq(artifact)
    baseline_bytes_per_el = Fraction(cfg.baseline_bits, 8)
    nominal = None
    if cfg.k is not None and cfg.m is not None:
        nominal = float(nominal_ratio(cfg.alpha, cfg.k, cfg.m))
    layers = []
    total_numel = 0
    total_stored = 0
    total_payload = 0
    for name in artifact.layer_names():
        layer = artifact.layers[name]
        rows, cols = layer.rows, layer.cols
        stored = layer.nnz
        numel = rows * cols
        layer_bytes = sizes[name] + _PARAM_BYTES
        measured = float(Fraction(numel) * baseline_bytes_per_el / layer_bytes)
        loss = None
        if eval_inputs is not None and delta_tensors is not None and name in delta_tensors:
            reconstructed = dequantize(layer) if isinstance(layer, QuantizedDelta) else layer
            loss = layer_loss(eval_inputs, delta_tensors[name], reconstructed)
        layers.append(LayerReport(
            name=name, rows=rows, cols=cols, stored=stored,
            sparsity=1.0 - stored / numel, keep_fraction=stored / numel,
            k=cfg.k, m=cfg.m, nominal_ratio=nominal, measured_ratio=measured,
            payload_bytes=sizes[name], loss=loss))
        total_numel += numel
        total_stored += stored
        total_payload += sizes[name]
    if not layers:
        raise StructuralError("artifact has no layers to report on")
    totals = {"numel": total_numel, "stored": total_stored,
              "payload_bytes": total_payload, "file_bytes": len(blob),
              "header_bytes": len(blob) - total_payload,
              "nominal_ratio": nominal,
              "measured_ratio": float(Fraction(total_numel) * baseline_bytes_per_el / len(blob))}
    config = {"method": cfg.method, "alpha": str(cfg.alpha), "group_size": cfg.group_size,
              "seed": cfg.seed, "k": cfg.k, "m": cfg.m, "baseline_bits": cfg.baseline_bits,
              "variance_kind": "population"}
    return CompressionReport(config=config, layers=layers, totals=totals)
