"""End-to-end glue: compress a delta checkpoint, reconstruct it, run the
separate-computation forward pass."""

from __future__ import annotations

import re
from fractions import Fraction

import numpy as np

from .checkpoint import DeltaCheckpoint, ModelCheckpoint
from .dqfile import (METHOD_GLOBAL_DROPOUT, METHOD_GROUP_DROPOUT, METHOD_MAGNITUDE,
                     DqArtifact, DqConfig)
from .dropout import DropoutMode, DropoutPlan, apply_dropout
from .errors import ParameterError, StructuralError
from .quant import QuantizedDelta, decompose, dequantize, quantize
from .search import AttentionProbe, SearchResult, search_group_size
from .tensor import CsrMatrix, densify, matmul_dense, matmul_sparse
from . import analysis


def _selected_layers(delta: DeltaCheckpoint, exclude: str | None) -> list[str]:
    names = delta.layer_names()
    if exclude:
        try:
            pattern = re.compile(exclude)
        except re.error as exc:
            raise ParameterError(f"bad exclude pattern '{exclude}': {exc}") from exc
        names = [n for n in names if not pattern.search(n)]
    if not names:
        raise StructuralError("no layers left to compress after filtering")
    return names


def compress_delta(delta: DeltaCheckpoint, *, alpha, group_size: int | None, seed: int,
                   k: int, m: int, baseline_bits: int = 16,
                   exclude: str | None = None) -> DqArtifact:
    """Dropout, quantize, and decompose every selected layer of a delta."""
    alpha = Fraction(alpha)
    plan = DropoutPlan(alpha=alpha, group_size=group_size, seed=seed,
                       mode=DropoutMode.GROUP_WISE)
    layers: dict[str, QuantizedDelta] = {}
    for name in _selected_layers(delta, exclude):
        sparse = apply_dropout(delta.tensors[name], plan, name)
        codes, params = quantize(sparse, k)
        layers[name] = decompose(codes, params, m)
    cfg = DqConfig(method=METHOD_GROUP_DROPOUT, alpha=alpha, seed=seed,
                   group_size=group_size, k=k, m=m, baseline_bits=baseline_bits)
    return DqArtifact(config=cfg, layers=layers)


def baseline_artifact(delta: DeltaCheckpoint, *, method: str, alpha, seed: int,
                      baseline_bits: int = 16, exclude: str | None = None) -> DqArtifact:
    """Sparse-only baseline artifact with raw float32 values (no quantization)."""
    alpha = Fraction(alpha)
    layers: dict[str, CsrMatrix] = {}
    for name in _selected_layers(delta, exclude):
        if method == METHOD_MAGNITUDE:
            layers[name] = analysis.magnitude_prune(delta.tensors[name], alpha)
        elif method == METHOD_GLOBAL_DROPOUT:
            layers[name] = analysis.global_dropout(delta.tensors[name], alpha, seed, name)
        else:
            raise ParameterError(f"unknown baseline method '{method}'")
    cfg = DqConfig(method=method, alpha=alpha, seed=seed, group_size=None,
                   k=None, m=None, baseline_bits=baseline_bits)
    return DqArtifact(config=cfg, layers=layers)


def reconstruct_layer(layer: QuantizedDelta | CsrMatrix) -> CsrMatrix:
    return dequantize(layer) if isinstance(layer, QuantizedDelta) else layer


def decompress(artifact: DqArtifact, base_name: str = "base") -> DeltaCheckpoint:
    """Dense delta checkpoint with zeros at unstored positions."""
    tensors = {name: densify(reconstruct_layer(artifact.layers[name]))
               for name in artifact.layer_names()}
    meta = {"method": artifact.config.method, "alpha": str(artifact.config.alpha)}
    return DeltaCheckpoint(base_name=base_name, tensors=tensors, metadata=meta)


def forward_separate(x: np.ndarray, base_w: np.ndarray, delta_sparse: CsrMatrix) -> np.ndarray:
    """x @ base^T plus x @ delta^T, computed independently then summed."""
    return matmul_dense(x, base_w) + matmul_sparse(x, delta_sparse)


def forward_fused(x: np.ndarray, base_w: np.ndarray, delta_sparse: CsrMatrix) -> np.ndarray:
    """Cross-check path: densify the delta, add it to the base, multiply once."""
    return matmul_dense(x, base_w + densify(delta_sparse))


def auto_group_size(base: ModelCheckpoint, delta: DeltaCheckpoint, *, wq_name: str,
                    wk_name: str, calib: np.ndarray, alpha, seed: int,
                    calib_fraction: float = 0.01) -> SearchResult:
    probe = AttentionProbe(wq_name=wq_name, wk_name=wk_name, calib=calib)
    return search_group_size(base, delta, probe, alpha, seed, calib_fraction)
