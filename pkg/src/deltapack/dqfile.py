"""DDQ1 compressed-delta artifact.

File layout (all integers little-endian):

    bytes 0..3    magic "DDQ1"
    bytes 4..11   u64 header length H
    bytes 12..    header: UTF-8 JSON, H bytes
    ...           zero padding so the payload starts on an 8-byte boundary
    payload       per-layer arrays

Header JSON (keys sorted, no whitespace):

    {"config": {"alpha": "8", "baseline_bits": 16, "group_size": 16 | null,
                "k": 4 | null, "m": 8 | null, "method": "group-dropout",
                "seed": 0},
     "layers": {name: quantized-entry | raw-entry}}

A quantized entry holds the uniform-quantizer parameters and one descriptor
per decomposed part; a raw entry (baseline artifacts) stores float32 values
instead of packed codes:

    quantized: {"kind": "q", "shape": [r, c], "nnz": n, "s": float, "z": int,
                "degenerate": bool, "constant": float,
                "parts": [{"nnz": nj, "ro": [off, len], "ci": [off, len],
                           "codes": [off, len]}, ...]}
    raw:       {"kind": "raw", "shape": [r, c], "nnz": n,
                "ro": [off, len], "ci": [off, len], "values": [off, len]}

Array spans are [offset, byte length] relative to the payload start.  Row
offsets and column indices are u32; packed codes use the bitpack layout at
k - log2(m) bits.  Layers are laid out in lexicographic name order, arrays in
the order listed above, each aligned to 4 bytes, so encoding is canonical:
decode followed by encode reproduces the original bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .bitpack import packed_size
from .dtc import atomic_write
from .errors import CorruptionError, ParameterError
from .quant import QuantParams, QuantPart, QuantizedDelta
from .tensor import CsrMatrix

MAGIC = b"DDQ1"
_U32_MAX = 2 ** 32 - 1

METHOD_GROUP_DROPOUT = "group-dropout"
METHOD_MAGNITUDE = "magnitude"
METHOD_GLOBAL_DROPOUT = "global-dropout"


@dataclass(frozen=True)
class DqConfig:
    method: str
    alpha: Fraction
    seed: int
    group_size: int | None = None  # None = full row
    k: int | None = None
    m: int | None = None
    baseline_bits: int = 16

    def __post_init__(self):
        if self.baseline_bits < 1:
            raise ParameterError("baseline_bits must be positive")


@dataclass
class DqArtifact:
    """One compressed fine-tuned model: config plus per-layer sparse data."""

    config: DqConfig
    layers: dict[str, QuantizedDelta | CsrMatrix] = field(default_factory=dict)

    def layer_names(self) -> list[str]:
        return sorted(self.layers)


def _u32_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.size and (arr.min() < 0 or arr.max() > _U32_MAX):
        raise ParameterError("index exceeds the u32 range of the artifact format")
    return arr.astype("<u4").tobytes()


class _PayloadBuilder:
    def __init__(self):
        self.parts: list[bytes] = []
        self.size = 0

    def put(self, raw: bytes) -> list[int]:
        pad = -self.size % 4
        if pad:
            self.parts.append(b"\x00" * pad)
            self.size += pad
        span = [self.size, len(raw)]
        self.parts.append(raw)
        self.size += len(raw)
        return span


def _layer_entry(layer, builder: _PayloadBuilder) -> dict:
    if isinstance(layer, QuantizedDelta):
        p = layer.params
        parts = []
        for part in layer.parts:
            parts.append({"nnz": part.nnz,
                          "ro": builder.put(_u32_bytes(part.row_offsets)),
                          "ci": builder.put(_u32_bytes(part.col_indices)),
                          "codes": builder.put(part.packed)})
        return {"kind": "q", "shape": [layer.rows, layer.cols], "nnz": layer.nnz,
                "s": p.s, "z": p.z, "degenerate": p.degenerate, "constant": p.constant,
                "parts": parts}
    if isinstance(layer, CsrMatrix):
        return {"kind": "raw", "shape": [layer.rows, layer.cols], "nnz": layer.nnz,
                "ro": builder.put(_u32_bytes(layer.row_offsets)),
                "ci": builder.put(_u32_bytes(layer.col_indices)),
                "values": builder.put(layer.values.astype("<f4").tobytes())}
    raise ParameterError(f"unsupported layer payload type {type(layer).__name__}")


def encode_dq(artifact: DqArtifact) -> bytes:
    cfg = artifact.config
    if cfg.k is not None:
        for layer in artifact.layers.values():
            if isinstance(layer, QuantizedDelta) and (layer.params.k != cfg.k
                                                      or layer.params.m != cfg.m):
                raise ParameterError("layer quantization params disagree with config")
    builder = _PayloadBuilder()
    layers = {name: _layer_entry(artifact.layers[name], builder)
              for name in sorted(artifact.layers)}
    header = json.dumps({"config": {"method": cfg.method, "alpha": str(cfg.alpha),
                                    "group_size": cfg.group_size, "seed": cfg.seed,
                                    "k": cfg.k, "m": cfg.m,
                                    "baseline_bits": cfg.baseline_bits},
                         "layers": layers},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    prefix_len = len(MAGIC) + 8 + len(header)
    head_pad = -prefix_len % 8
    return b"".join([MAGIC, struct.pack("<Q", len(header)), header,
                     b"\x00" * head_pad, *builder.parts])


def payload_sizes(artifact: DqArtifact) -> dict[str, int]:
    """Per-layer payload byte counts (arrays plus their alignment padding)."""
    sizes = {}
    builder = _PayloadBuilder()
    for name in sorted(artifact.layers):
        before = builder.size
        _layer_entry(artifact.layers[name], builder)
        sizes[name] = builder.size - before
    return sizes


def _take(payload: bytes, span, what: str) -> bytes:
    try:
        offset, length = int(span[0]), int(span[1])
    except (TypeError, ValueError, IndexError) as exc:
        raise CorruptionError(f"bad span for {what}") from exc
    if offset < 0 or length < 0 or offset + length > len(payload):
        raise CorruptionError(f"{what} data out of bounds")
    return payload[offset:offset + length]


def _u32_array(raw: bytes, what: str) -> np.ndarray:
    if len(raw) % 4:
        raise CorruptionError(f"{what} byte length not a multiple of 4")
    return np.frombuffer(raw, dtype="<u4").astype(np.int64)


def _decode_layer(name: str, entry: dict, payload: bytes,
                  cfg: DqConfig) -> QuantizedDelta | CsrMatrix:
    try:
        kind = entry["kind"]
        rows, cols = (int(d) for d in entry["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptionError(f"bad layer entry '{name}': {exc}") from exc
    if rows < 1 or cols < 1:
        raise CorruptionError(f"layer '{name}' has invalid shape [{rows}, {cols}]")
    if kind == "raw":
        ro = _u32_array(_take(payload, entry["ro"], f"{name}.ro"), f"{name}.ro")
        ci = _u32_array(_take(payload, entry["ci"], f"{name}.ci"), f"{name}.ci")
        vals = np.frombuffer(_take(payload, entry["values"], f"{name}.values"), dtype="<f4")
        try:
            return CsrMatrix(rows, cols, ro, ci, vals.astype(np.float32))
        except Exception as exc:
            raise CorruptionError(f"layer '{name}': {exc}") from exc
    if kind != "q":
        raise CorruptionError(f"layer '{name}' has unknown kind '{kind}'")
    if cfg.k is None or cfg.m is None:
        raise CorruptionError("quantized layer present but config lacks k/m")
    try:
        params = QuantParams(k=cfg.k, m=cfg.m, s=float(entry["s"]), z=int(entry["z"]),
                             degenerate=bool(entry["degenerate"]),
                             constant=float(entry["constant"]))
        part_entries = entry["parts"]
    except (KeyError, TypeError, ValueError, ParameterError) as exc:
        raise CorruptionError(f"bad quantization params for '{name}': {exc}") from exc
    if len(part_entries) != params.m:
        raise CorruptionError(f"layer '{name}' has {len(part_entries)} parts, expected {params.m}")
    parts = []
    for idx, pe in enumerate(part_entries):
        what = f"{name}.part{idx}"
        nnz = int(pe["nnz"])
        ro = _u32_array(_take(payload, pe["ro"], what), what)
        ci = _u32_array(_take(payload, pe["ci"], what), what)
        packed = _take(payload, pe["codes"], what)
        if len(ro) != rows + 1 or (len(ro) and ro[-1] != nnz) or len(ci) != nnz:
            raise CorruptionError(f"{what}: structure does not match nnz")
        if len(packed) != packed_size(nnz, params.part_width):
            raise CorruptionError(f"{what}: packed code length mismatch")
        parts.append(QuantPart(row_offsets=ro, col_indices=ci, packed=packed, nnz=nnz))
    try:
        return QuantizedDelta(rows, cols, params, tuple(parts))
    except Exception as exc:
        raise CorruptionError(f"layer '{name}': {exc}") from exc


def decode_dq(blob: bytes) -> DqArtifact:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CorruptionError("not a DDQ1 artifact")
    (header_len,) = struct.unpack_from("<Q", blob, 4)
    if 12 + header_len > len(blob):
        raise CorruptionError("header length exceeds file size")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
        raw_cfg = header["config"]
        cfg = DqConfig(method=str(raw_cfg["method"]),
                       alpha=Fraction(raw_cfg["alpha"]),
                       seed=int(raw_cfg["seed"]),
                       group_size=(None if raw_cfg["group_size"] is None
                                   else int(raw_cfg["group_size"])),
                       k=None if raw_cfg["k"] is None else int(raw_cfg["k"]),
                       m=None if raw_cfg["m"] is None else int(raw_cfg["m"]),
                       baseline_bits=int(raw_cfg["baseline_bits"]))
        layer_entries = header["layers"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError,
            ValueError, ZeroDivisionError) as exc:
        raise CorruptionError(f"bad artifact header: {exc}") from exc
    payload_base = 12 + header_len + (-(12 + header_len) % 8)
    payload = blob[payload_base:]
    layers = {name: _decode_layer(name, entry, payload, cfg)
              for name, entry in layer_entries.items()}
    return DqArtifact(config=cfg, layers=layers)


def write_dq(path: str, artifact: DqArtifact) -> None:
    atomic_write(path, encode_dq(artifact))


def read_dq(path: str) -> DqArtifact:
    with open(path, "rb") as fh:
        return decode_dq(fh.read())
