"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (bad files, shapes,
parameters, numerics).
"""

from __future__ import annotations

import argparse
import math
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from .analysis import build_report
from .checkpoint import (load_checkpoint, load_delta, merge, save_checkpoint,
                         save_delta, split)
from .dqfile import (METHOD_GLOBAL_DROPOUT, METHOD_MAGNITUDE, read_dq, write_dq)
from .dtc import atomic_write
from .errors import DeltaPackError, ParameterError, StructuralError
from .pipeline import (auto_group_size, baseline_artifact, compress_delta,
                       decompress, forward_fused, forward_separate,
                       reconstruct_layer)
from .search import AttentionProbe, proxy_error, subsample_rows
from .fixtures import write_fixtures


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems instead of argparse's 2
        raise UsageError(message)


def _alpha_arg(text: str) -> Fraction:
    try:
        alpha = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"bad ratio '{text}': {exc}") from exc
    if alpha < 1:
        raise argparse.ArgumentTypeError(f"compression ratio must be >= 1, got {text}")
    return alpha


def _group_size_arg(text: str):
    if text in ("auto", "row"):
        return text
    try:
        value = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"group size must be an integer, 'auto' or 'row'") from exc
    if value < 1:
        raise argparse.ArgumentTypeError("group size must be positive")
    return value


def _load_inputs(path: str) -> np.ndarray:
    from .dtc import read_dtc
    tensors, _ = read_dtc(path)
    if "X" not in tensors:
        raise StructuralError(f"inputs file '{path}' must contain a tensor named 'X'")
    return tensors["X"]


def _write_report(report, json_path: str | None, csv_path: str | None) -> None:
    if json_path:
        atomic_write(json_path, (report.to_json() + "\n").encode("utf-8"))
    if csv_path:
        atomic_write(csv_path, ("\n".join(report.csv_rows()) + "\n").encode("utf-8"))


def _cmd_gen_fixtures(args) -> int:
    paths = write_fixtures(args.out, args.seed)
    for kind in ("base", "finetuned", "calib"):
        print(f"{kind}: {paths[kind]}")
    return 0


def _cmd_split(args) -> int:
    base = load_checkpoint(args.base)
    finetuned = load_checkpoint(args.finetuned)
    delta = split(base, finetuned)
    save_delta(args.out, delta)
    for name in delta.layer_names():
        norm = math.sqrt(float(np.sum(delta.tensors[name].astype(np.float64) ** 2)))
        print(f"{name}: delta_norm={norm:.6g}")
    print(f"wrote {args.out}")
    return 0


def _cmd_compress(args) -> int:
    delta = load_delta(args.delta)
    group_size = args.group_size
    if group_size == "auto":
        if not (args.base and args.probe_q and args.probe_k and args.calib):
            raise ParameterError(
                "--group-size auto needs --base, --probe-q, --probe-k and --calib")
        base = load_checkpoint(args.base)
        calib = _load_inputs(args.calib)
        result = auto_group_size(base, delta, wq_name=args.probe_q, wk_name=args.probe_k,
                                 calib=calib, alpha=args.alpha, seed=args.seed,
                                 calib_fraction=args.calib_fraction)
        for h_g, err in result.candidates:
            print(f"candidate group_size={h_g}: proxy_error={err:.6g}")
        print(f"selected group_size={result.best}")
        group_size = result.best
    elif group_size == "row":
        group_size = None
    artifact = compress_delta(delta, alpha=args.alpha, group_size=group_size,
                              seed=args.seed, k=args.k, m=args.m,
                              baseline_bits=args.baseline_bits, exclude=args.exclude)
    write_dq(args.out, artifact)
    eval_inputs = _load_inputs(args.calib) if args.calib else None
    report = build_report(artifact, eval_inputs=eval_inputs, delta_tensors=delta.tensors)
    _write_report(report, args.report_json, args.report_csv)
    for line in report.summary_lines():
        print(line)
    print(f"wrote {args.out}")
    return 0


def _cmd_decompress(args) -> int:
    artifact = read_dq(args.dq)
    delta = decompress(artifact)
    save_delta(args.out, delta)
    print(f"layers={len(delta.tensors)} method={artifact.config.method} "
          f"alpha={artifact.config.alpha}")
    print(f"wrote {args.out}")
    return 0


def _cmd_forward(args) -> int:
    base = load_checkpoint(args.base)
    artifact = read_dq(args.dq)
    x = _load_inputs(args.inputs)
    if args.layer not in base.tensors:
        raise StructuralError(f"layer '{args.layer}' missing from base checkpoint")
    if args.layer not in artifact.layers:
        raise StructuralError(f"layer '{args.layer}' missing from artifact")
    sparse = reconstruct_layer(artifact.layers[args.layer])
    y = forward_separate(x, base.tensors[args.layer], sparse)
    print(f"layer={args.layer} output_shape={y.shape[0]}x{y.shape[1]} "
          f"output_norm={math.sqrt(float(np.sum(y.astype(np.float64) ** 2))):.6g}")
    if args.fused:
        y_fused = forward_fused(x, base.tensors[args.layer], sparse)
        diff = np.linalg.norm((y - y_fused).astype(np.float64))
        denom = max(np.linalg.norm(y.astype(np.float64)), 1e-30)
        print(f"fused_relative_diff={diff / denom:.6e}")
    if args.out:
        from .dtc import write_dtc
        write_dtc(args.out, {"Y": y}, {"name": "forward-output", "layer": args.layer})
        print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    base = load_checkpoint(args.base)
    finetuned = load_checkpoint(args.finetuned)
    artifact = read_dq(args.dq)
    x = _load_inputs(args.inputs)
    delta = split(base, finetuned)
    from .analysis import layer_loss
    from .tensor import matmul_dense, matmul_sparse
    for name in artifact.layer_names():
        if name not in finetuned.tensors:
            raise StructuralError(f"artifact layer '{name}' missing from checkpoints")
        sparse = reconstruct_layer(artifact.layers[name])
        a = matmul_dense(x, finetuned.tensors[name])
        a_hat = matmul_dense(x, base.tensors[name]) + matmul_sparse(x, sparse)
        d = a.astype(np.float64) - a_hat.astype(np.float64)
        print(f"{name}: layer_loss={float(np.sum(d * d)):.6g}")
    if args.probe_q and args.probe_k:
        compressed = {name: reconstruct_layer(artifact.layers[name])
                      for name in (args.probe_q, args.probe_k) if name in artifact.layers}
        probe = AttentionProbe(args.probe_q, args.probe_k,
                               subsample_rows(x, args.calib_fraction, artifact.config.seed))
        ep = proxy_error(base, delta, compressed, probe)
        print(f"proxy_error={ep:.6g} (probe {args.probe_q} / {args.probe_k})")
    return 0


def _cmd_stats(args) -> int:
    artifact = read_dq(args.dq)
    report = build_report(artifact)
    _write_report(report, args.report_json, args.report_csv)
    for line in report.summary_lines():
        print(line)
    return 0


def _cmd_baseline(args) -> int:
    delta = load_delta(args.delta)
    artifact = baseline_artifact(delta, method=args.method, alpha=args.alpha,
                                 seed=args.seed, baseline_bits=args.baseline_bits,
                                 exclude=args.exclude)
    write_dq(args.out, artifact)
    report = build_report(artifact, eval_inputs=None, delta_tensors=delta.tensors)
    _write_report(report, args.report_json, None)
    for line in report.summary_lines():
        print(line)
    print(f"wrote {args.out}")
    return 0


def _cmd_merge(args) -> int:
    base = load_checkpoint(args.base)
    delta = load_delta(args.delta)
    merged = merge(base, delta)
    save_checkpoint(args.out, merged)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="deltapack",
                     description="Split fine-tuned checkpoints into base + delta and "
                                 "compress the delta with grouped dropout plus low-bit "
                                 "separate quantization.")
    parser.add_argument("--version", action="version", version=f"deltapack {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-fixtures", help="write deterministic toy checkpoints")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_fixtures)

    p = sub.add_parser("split", help="delta = finetuned - base")
    p.add_argument("base")
    p.add_argument("finetuned")
    p.add_argument("out")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("compress", help="dropout + quantize a delta checkpoint")
    p.add_argument("delta")
    p.add_argument("out")
    p.add_argument("--alpha", type=_alpha_arg, required=True,
                   help="dropout compression ratio (integer or fraction, e.g. 8 or 5/2)")
    p.add_argument("--group-size", type=_group_size_arg, default="row",
                   help="columns per dropout group, or 'row' (whole row) or 'auto' (search)")
    p.add_argument("--k", type=int, default=8, help="quantizer bit width (1..8)")
    p.add_argument("--m", type=int, default=1, help="decomposition parts (power of two)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base", help="base checkpoint (required for --group-size auto)")
    p.add_argument("--probe-q", help="query projection layer name for the search proxy")
    p.add_argument("--probe-k", help="key projection layer name for the search proxy")
    p.add_argument("--calib", help="DTC file with calibration inputs tensor 'X'")
    p.add_argument("--calib-fraction", type=float, default=0.01,
                   help="fraction of calibration rows used by the search")
    p.add_argument("--exclude", help="regex of layer names to leave uncompressed")
    p.add_argument("--baseline-bits", type=int, default=16,
                   help="bit width of the uncompressed reference in ratio accounting")
    p.add_argument("--report-json")
    p.add_argument("--report-csv")
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("decompress", help="reconstruct a dense delta checkpoint")
    p.add_argument("dq")
    p.add_argument("out")
    p.set_defaults(func=_cmd_decompress)

    p = sub.add_parser("forward", help="separate-computation forward pass for one layer")
    p.add_argument("base")
    p.add_argument("dq")
    p.add_argument("inputs")
    p.add_argument("--layer", required=True)
    p.add_argument("--fused", action="store_true",
                   help="also compute the fused product as a cross-check")
    p.add_argument("--out", help="write the output tensor as a DTC file")
    p.set_defaults(func=_cmd_forward)

    p = sub.add_parser("eval", help="per-layer loss of an artifact against the fine-tuned model")
    p.add_argument("base")
    p.add_argument("finetuned")
    p.add_argument("dq")
    p.add_argument("inputs")
    p.add_argument("--probe-q")
    p.add_argument("--probe-k")
    p.add_argument("--calib-fraction", type=float, default=1.0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("stats", help="report on an artifact without checkpoints")
    p.add_argument("dq")
    p.add_argument("--report-json")
    p.add_argument("--report-csv")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("baseline", help="sparse-only baseline artifact")
    p.add_argument("delta")
    p.add_argument("out")
    p.add_argument("--method", required=True,
                   choices=[METHOD_MAGNITUDE, METHOD_GLOBAL_DROPOUT])
    p.add_argument("--alpha", type=_alpha_arg, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exclude")
    p.add_argument("--baseline-bits", type=int, default=16)
    p.add_argument("--report-json")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("merge", help="finetuned = base + delta")
    p.add_argument("base")
    p.add_argument("delta")
    p.add_argument("out")
    p.set_defaults(func=_cmd_merge)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except DeltaPackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
