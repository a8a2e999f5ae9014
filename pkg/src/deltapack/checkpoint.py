"""Checkpoint containers and the base/delta weight split.

A checkpoint is an ordered map of layer name to 2-D float32 weight matrix.
Layer iteration is always lexicographic so downstream file layouts and reports
are deterministic.  Non-finite weights are rejected on construction: the
quantizer's min/max statistics are undefined for them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, StructuralError
from .tensor import dense


def _validate_tensors(tensors: dict[str, np.ndarray], owner: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name in sorted(tensors):
        arr = dense(tensors[name], copy=False)
        if not np.isfinite(arr).all():
            raise NumericError(f"{owner}: layer '{name}' contains NaN or Inf")
        out[name] = arr
    return out


@dataclass
class ModelCheckpoint:
    name: str
    tensors: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.tensors = _validate_tensors(self.tensors, f"checkpoint '{self.name}'")

    def layer_names(self) -> list[str]:
        return sorted(self.tensors)


@dataclass
class DeltaCheckpoint:
    """Per-layer differences between a fine-tuned checkpoint and its base."""

    base_name: str
    tensors: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.tensors = _validate_tensors(self.tensors, f"delta of '{self.base_name}'")

    def layer_names(self) -> list[str]:
        return sorted(self.tensors)


def _check_aligned(left: dict[str, np.ndarray], right: dict[str, np.ndarray],
                   left_desc: str, right_desc: str) -> None:
    only_left = sorted(set(left) - set(right))
    only_right = sorted(set(right) - set(left))
    if only_left or only_right:
        missing = only_left[0] if only_left else only_right[0]
        raise StructuralError(
            f"layer sets differ between {left_desc} and {right_desc} (e.g. '{missing}')")
    for name in sorted(left):
        if left[name].shape != right[name].shape:
            raise ShapeError(
                f"layer '{name}' shape mismatch: {left_desc} has {left[name].shape}, "
                f"{right_desc} has {right[name].shape}")


def split(base: ModelCheckpoint, finetuned: ModelCheckpoint) -> DeltaCheckpoint:
    """Per-layer delta = finetuned - base, exact float32 subtraction."""
    _check_aligned(base.tensors, finetuned.tensors, "base", "fine-tuned")
    deltas = {name: finetuned.tensors[name] - base.tensors[name] for name in base.tensors}
    meta = {"finetuned_name": finetuned.name}
    return DeltaCheckpoint(base_name=base.name, tensors=deltas, metadata=meta)


def merge(base: ModelCheckpoint, delta: DeltaCheckpoint) -> ModelCheckpoint:
    """Per-layer base + delta; inverse of split on the same base."""
    _check_aligned(base.tensors, delta.tensors, "base", "delta")
    merged = {name: base.tensors[name] + delta.tensors[name] for name in base.tensors}
    name = delta.metadata.get("finetuned_name", f"{base.name}+delta")
    return ModelCheckpoint(name=name, tensors=merged, metadata=dict(base.metadata))


def load_checkpoint(path: str) -> ModelCheckpoint:
    from .dtc import read_dtc
    tensors, metadata = read_dtc(path)
    name = metadata.get("name", path)
    return ModelCheckpoint(name=name, tensors=tensors, metadata=metadata)


def save_checkpoint(path: str, ckpt: ModelCheckpoint) -> None:
    from .dtc import write_dtc
    write_dtc(path, ckpt.tensors, {**ckpt.metadata, "name": ckpt.name})


def load_delta(path: str) -> DeltaCheckpoint:
    from .dtc import read_dtc
    tensors, metadata = read_dtc(path)
    base_name = metadata.get("base_name", "")
    return DeltaCheckpoint(base_name=base_name, tensors=tensors, metadata=metadata)


def save_delta(path: str, delta: DeltaCheckpoint) -> None:
    from .dtc import write_dtc
    meta = {**delta.metadata, "kind": "delta", "base_name": delta.base_name}
    write_dtc(path, delta.tensors, meta)
