"""``enec`` command line: analyze, tune, compress, decompress, verify, bench.

Exit status: 0 success, 2 usage, 3 I/O, 4 format or verification failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import analysis, ingest, stream, tuner
from .errors import EnecError, IoError, MismatchError, ParamError
from .fpsplit import FloatFormat, as_words, get_format

logger = logging.getLogger("enec")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4

TUNE_COLUMNS = ["tensor_name", "dtype", "element_count", "b", "n", "m", "L", "B_exp", "predicted_CR"]
BENCH_COLUMNS = [
    "model_name",
    "dtype",
    "compression_ratio_CR",
    "compress_throughput_GBps",
    "decompress_throughput_GBps",
]


@dataclass
class LoadedTensor:
    name: str
    fmt: FloatFormat
    data: bytes


@dataclass
class BenchRow:
    model_name: str
    dtype: str
    compression_ratio: float
    compress_gbps: float
    decompress_gbps: float
    wall_seconds: float

    def csv_row(self) -> list:
        return [
            self.model_name,
            self.dtype,
            f"{self.compression_ratio:.4f}",
            f"{self.compress_gbps:.4f}",
            f"{self.decompress_gbps:.4f}",
        ]


def load_inputs(path, dtype: str | None, safetensors: bool = False, strict: bool = False) -> tuple[list[LoadedTensor], bool]:
    """Read ``path`` as tensors.  Returns (tensors, came_from_safetensors)."""
    if safetensors or ingest.is_safetensors(path):
        index = ingest.load_safetensors(path, strict=strict)
        for name, kind in index.skipped:
            print(f"skipped {name}: unsupported dtype {kind}", file=sys.stderr)
        tensors = [LoadedTensor(src.name, src.fmt, ingest.read_tensor(path, src)) for src in index.tensors]
        return tensors, True
    if dtype is None:
        raise ParamError("--dtype is required for raw input")
    src = ingest.load_raw(path, dtype)
    return [LoadedTensor(src.name, src.fmt, ingest.read_tensor(path, src))], False


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from exc


def _label(tensor: LoadedTensor, path) -> str:
    return tensor.name or Path(path).name


# --- subcommands -----------------------------------------------------------


def cmd_analyze(args) -> int:
    tensors, _ = load_inputs(args.input, args.dtype, args.safetensors)
    for tensor in tensors:
        words = as_words(tensor.data, tensor.fmt)
        if words.size == 0:
            print(f"{_label(tensor, args.input)}: empty")
            continue
        hist = stream.tensor_histogram(words, tensor.fmt)
        print(f"tensor       {_label(tensor, args.input)}")
        print(f"dtype        {tensor.fmt.name}")
        print(f"elements     {hist.total}")
        print(f"range        l={hist.low} h={hist.high} (span {hist.high - hist.low + 1})")
        print(f"distinct     {hist.support.shape[0]}")
        print(f"entropy      {analysis.entropy(hist):.4f} bits")
        try:
            fit = analysis.rank_fit(hist)
            print(f"rank fit     rank = {fit.slope:.4f} * x + {fit.intercept:.4f} (R^2 {fit.r_squared:.4f})")
        except EnecError as exc:
            print(f"rank fit     n/a ({exc})")
        values, ranks = analysis.frequency_ranks(hist)
        probs = hist.probabilities
        print("exponent  count  probability  rank")
        for value, rank in zip(values, ranks):
            print(f"{int(value):8d}  {int(hist.counts[value])}  {probs[value]:.6f}  {int(rank)}")
        print()
    return EXIT_OK


def tune_rows(tensors: Sequence[LoadedTensor], label: str, block_size: int = stream.DEFAULT_BLOCK_SIZE) -> list[list]:
    rows = []
    lengths = tuner.group_lengths_for(block_size)
    for tensor in tensors:
        words = as_words(tensor.data, tensor.fmt)
        if words.size == 0:
            logger.warning("skipping empty tensor %s", tensor.name)
            continue
        hist = stream.tensor_histogram(words, tensor.fmt)
        params = tuner.tune(hist, lengths)
        b_exp = tuner.predicted_bits(hist, params)
        cr = tensor.fmt.total_bits / (tensor.fmt.residue_bits + b_exp)
        rows.append([tensor.name or label, tensor.fmt.name, hist.total, *params.astuple(), f"{b_exp:.6f}", f"{cr:.6f}"])
    return rows


def cmd_tune(args) -> int:
    tensors, _ = load_inputs(args.input, args.dtype, args.safetensors)
    rows = tune_rows(tensors, Path(args.input).name, args.block_size)
    if args.csv:
        try:
            with open(args.csv, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(TUNE_COLUMNS)
                writer.writerows(rows)
        except OSError as exc:
            raise IoError(f"cannot write {args.csv}: {exc.strerror}") from exc
    for row in rows:
        name, dtype, count, b, n, m, L, b_exp, cr = row
        print(f"{name}: {dtype} x{count}  (b,n,m,L)=({b},{n},{m},{L})  B_exp={b_exp}  predicted CR={cr}")
    return EXIT_OK


def cmd_compress(args) -> int:
    tensors, from_st = load_inputs(args.input, args.dtype, args.safetensors)
    params = tuner.TunedParams.parse(args.params) if args.params else None
    inputs = [stream.TensorInput(t.name, t.data, t.fmt, params) for t in tensors]
    flags = stream.FLAG_SAFETENSORS if from_st else 0
    blob = stream.compress_tensors(inputs, workers=args.threads, block_size=args.block_size, flags=flags)
    ingest.write_output(args.output, blob)
    original = sum(len(t.data) for t in tensors)
    ratio = original / len(blob) if blob else math.nan
    print(f"{args.input} -> {args.output}: {original} -> {len(blob)} bytes, CR {ratio:.4f}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    blob = _read(args.input)
    data = stream.decompress(blob, workers=args.threads)
    ingest.write_output(args.output, data)
    print(f"{args.input} -> {args.output}: {len(blob)} -> {len(data)} bytes")
    return EXIT_OK


def cmd_verify(args) -> int:
    blob = _read(args.compressed)
    cfile = stream.read_container(blob)
    if cfile.header.flags & stream.FLAG_SAFETENSORS:
        index = ingest.load_safetensors(args.original)
        original = [ingest.read_tensor(args.original, src) for src in index.tensors]
    else:
        original = _read(args.original)
    report = stream.verify(original, blob, workers=args.threads)
    print("identical")
    print(f"original bytes        {report.original_bytes}")
    print(f"compressed bytes      {report.compressed_bytes}")
    print(f"compression ratio     {report.compression_ratio:.4f}")
    print(f"exponent bits/elem    {report.exponent_bits_per_element:.4f}")
    print(f"formula ratio         {report.formula_ratio:.4f}")
    return EXIT_OK


def _best_time(fn, repeat: int):
    best = math.inf
    result = None
    for _ in range(max(1, repeat)):
        start = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - start)
    return best, result


def run_bench(tensors: Sequence[LoadedTensor], name: str, workers: int = 1, repeat: int = 1,
              block_size: int = stream.DEFAULT_BLOCK_SIZE) -> BenchRow:
    """Time a full round trip (best of ``repeat``) and check it is lossless."""
    start = time.perf_counter()
    inputs = [stream.TensorInput(t.name, t.data, t.fmt) for t in tensors]
    original = sum(len(t.data) for t in tensors)
    c_time, blob = _best_time(lambda: stream.compress_tensors(inputs, workers=workers, block_size=block_size), repeat)
    d_time, decoded = _best_time(lambda: stream.decompress_tensors(blob, workers=workers), repeat)
    for tensor, out in zip(tensors, decoded):
        where = stream.first_mismatch(tensor.data, out.data)
        if where is not None:
            raise MismatchError(where, f"tensor {tensor.name!r}: round trip differs at byte {where}")
    fmts = {t.fmt.name for t in tensors}
    return BenchRow(
        model_name=name,
        dtype=fmts.pop() if len(fmts) == 1 else "mixed",
        compression_ratio=original / len(blob),
        compress_gbps=original / c_time / 1e9 if c_time > 0 else math.inf,
        decompress_gbps=original / d_time / 1e9 if d_time > 0 else math.inf,
        wall_seconds=time.perf_counter() - start,
    )


def scaling_factor(single: BenchRow, multi: BenchRow) -> float:
    """Round-trip speedup of ``multi`` over ``single`` (harmonic combination of both directions)."""
    def round_trip(row: BenchRow) -> float:
        return 1.0 / (1.0 / row.compress_gbps + 1.0 / row.decompress_gbps)
    return round_trip(multi) / round_trip(single)


def cmd_bench(args) -> int:
    tensors, _ = load_inputs(args.input, args.dtype, args.safetensors)
    name = Path(args.input).stem
    row = run_bench(tensors, name, args.threads, args.repeat, args.block_size)
    rows = [row]
    print(f"{name}: {row.dtype} CR {row.compression_ratio:.4f}  "
          f"compress {row.compress_gbps:.3f} GB/s  decompress {row.decompress_gbps:.3f} GB/s  "
          f"({args.threads} workers)")
    if args.threads > 1:
        single = run_bench(tensors, name, 1, args.repeat, args.block_size)
        print(f"1 worker: compress {single.compress_gbps:.3f} GB/s  decompress {single.decompress_gbps:.3f} GB/s")
        print(f"scaling 1 -> {args.threads} workers: {scaling_factor(single, row):.2f}x")
    if args.csv:
        try:
            with open(args.csv, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(BENCH_COLUMNS)
                writer.writerows(r.csv_row() for r in rows)
        except OSError as exc:
            raise IoError(f"cannot write {args.csv}: {exc.strerror}") from exc
    return EXIT_OK


# --- argument parsing ------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {value}")
    return value


def _dtype(text: str) -> str:
    try:
        return get_format(text).name
    except EnecError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enec", description="Lossless exponent coding for BF16/FP16/FP32 weights.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def source(p, dtype_required=False):
        p.add_argument("input", help="raw weight dump or .safetensors file")
        p.add_argument("--dtype", type=_dtype, required=dtype_required, help="BF16, FP16 or FP32 (raw input)")
        p.add_argument("--safetensors", action="store_true", help="parse input as safetensors regardless of suffix")

    def threads(p):
        p.add_argument("--threads", type=_positive_int, default=1, help="codec worker count")

    def block(p):
        p.add_argument("--block-size", type=_positive_int, default=stream.DEFAULT_BLOCK_SIZE)

    p = sub.add_parser("analyze", help="exponent histogram, entropy, range and rank fit")
    source(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("tune", help="search (b, n, m, L) per tensor")
    source(p)
    block(p)
    p.add_argument("--csv", help="write one row per tensor to this file")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("compress", help="encode to .enec")
    source(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--params", help="fixed b,n,m,L for every tensor instead of tuning")
    threads(p)
    block(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode .enec back to the original bytes")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    threads(p)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("verify", help="check a container reproduces the original exactly")
    p.add_argument("original")
    p.add_argument("compressed")
    threads(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time a round trip and report throughput")
    source(p)
    block(p)
    threads(p)
    p.add_argument("--repeat", type=_positive_int, default=1)
    p.add_argument("--csv", help="write the benchmark row to this file")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (IoError, OSError) as exc:
        print(f"enec: {exc}", file=sys.stderr)
        return EXIT_IO
    except EnecError as exc:
        print(f"enec: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as exc:
        print(f"enec: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
