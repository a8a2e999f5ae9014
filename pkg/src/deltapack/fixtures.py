"""Deterministic toy-transformer fixtures for tests and examples.

Two layers with attention and MLP projections, all 64x64, plus a 32x64
calibration input block.  The fine-tuned weights add noise whose magnitude
varies per 8-column block, so grouped dropout has real structure to exploit
and the group-size search has a non-trivial optimum.
"""

from __future__ import annotations

import os

import numpy as np

from .checkpoint import ModelCheckpoint
from .dtc import write_dtc

HIDDEN = 64
CALIB_ROWS = 32
BLOCK = 8

_PARTS = ("attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.fc1", "mlp.fc2")
LAYER_NAMES = tuple(f"layers.{i}.{part}" for i in range(2) for part in _PARTS)
PROBE_WQ = "layers.0.attn.wq"
PROBE_WK = "layers.0.attn.wk"


def toy_base(seed: int = 0) -> ModelCheckpoint:
    gen = np.random.default_rng(seed)
    tensors = {name: gen.normal(0.0, 0.25, (HIDDEN, HIDDEN)).astype(np.float32)
               for name in sorted(LAYER_NAMES)}
    return ModelCheckpoint(name="toy-base", tensors=tensors, metadata={"family": "toy"})


def toy_finetuned(base: ModelCheckpoint, seed: int = 0) -> ModelCheckpoint:
    gen = np.random.default_rng(seed + 1)
    tensors = {}
    for name in sorted(base.tensors):
        w = base.tensors[name]
        block_scale = gen.uniform(0.05, 1.0, HIDDEN // BLOCK) ** 2
        noise = gen.normal(0.0, 0.02, w.shape) * np.repeat(block_scale, BLOCK)[None, :]
        tensors[name] = (w + noise.astype(np.float32)).astype(np.float32)
    return ModelCheckpoint(name="toy-finetuned", tensors=tensors,
                           metadata={"family": "toy", "base": base.name})


def toy_calib(seed: int = 0) -> np.ndarray:
    gen = np.random.default_rng(seed + 2)
    return gen.normal(0.0, 1.0, (CALIB_ROWS, HIDDEN)).astype(np.float32)


def write_fixtures(outdir: str, seed: int = 0) -> dict[str, str]:
    """Write base.dtc, finetuned.dtc, calib.dtc; returns their paths."""
    os.makedirs(outdir, exist_ok=True)
    base = toy_base(seed)
    finetuned = toy_finetuned(base, seed)
    calib = toy_calib(seed)
    paths = {"base": os.path.join(outdir, "base.dtc"),
             "finetuned": os.path.join(outdir, "finetuned.dtc"),
             "calib": os.path.join(outdir, "calib.dtc")}
    write_dtc(paths["base"], base.tensors, {**base.metadata, "name": base.name})
    write_dtc(paths["finetuned"], finetuned.tensors,
              {**finetuned.metadata, "name": finetuned.name})
    write_dtc(paths["calib"], {"X": calib}, {"name": "toy-calib", "kind": "inputs"})
    return paths
