"""deltapack: delta-weight compression for families of fine-tuned models.

Splits a fine-tuned checkpoint into a shared base plus a per-model delta,
sparsifies the delta with exact-fraction grouped dropout, quantizes the
survivors to k bits, decomposes the codes into m bit-packed parts, and stores
everything in a compact CSR artifact.  Deployment recomputes outputs as
x @ base^T + x @ delta^T so one base serves every model.
"""

__version__ = "0.1.0"

from .errors import (CorruptionError, DegenerateInputError, DeltaPackError,
                     NumericError, ParameterError, ShapeError, StructuralError)
from .tensor import (CsrMatrix, DenseMatrix, dense, densify, matmul_dense,
                     matmul_sparse, to_csr)
from .checkpoint import (DeltaCheckpoint, ModelCheckpoint, load_checkpoint,
                         load_delta, merge, save_checkpoint, save_delta, split)
from .dropout import (FULL_ROW, DropoutMode, DropoutPlan, MaskMatrix,
                      apply_dropout, keep_count, make_mask)
from .search import (AttentionProbe, SearchResult, candidate_group_sizes,
                     proxy_error, search_group_size, subsample_rows)
from .quant import (CsrCodes, QuantParams, QuantPart, QuantizedDelta, decompose,
                    dequantize, dequantize_codes, nominal_ratio, quantize)
from .bitpack import pack_bits, packed_size, unpack_bits
from .analysis import (CompressionReport, IntermediateStats, LayerReport,
                       build_report, global_dropout, intermediate_stats,
                       layer_loss, magnitude_prune)
from .dtc import read_dtc, write_dtc
from .dqfile import (DqArtifact, DqConfig, METHOD_GLOBAL_DROPOUT,
                     METHOD_GROUP_DROPOUT, METHOD_MAGNITUDE, read_dq, write_dq)
from .pipeline import (auto_group_size, baseline_artifact, compress_delta,
                       decompress, forward_fused, forward_separate,
                       reconstruct_layer)
from .fixtures import toy_base, toy_calib, toy_finetuned, write_fixtures

__all__ = [name for name in dir() if not name.startswith("_")]
