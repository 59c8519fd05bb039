"""Lossless compression of BF16, FP16 and FP32 weight tensors.

Exponents are remapped around a tuned base, split into fixed-width low
bits plus a rare overflow stream, and packed with a halving bit packer.
Sign and mantissa bits are stored verbatim.
"""

from __future__ import annotations

from .analysis import ExponentHistogram, build_histogram, entropy, rank_fit
from .errors import EnecError
from .fpsplit import BF16, FP16, FP32, FloatFormat, get_format
from .stream import compress, compress_tensors, decompress, decompress_tensors, read_container, verify
from .tuner import TunedParams, tune

__all__ = [
    "BF16", "FP16", "FP32", "FloatFormat", "get_format",
    "ExponentHistogram", "build_histogram", "entropy", "rank_fit",
    "TunedParams", "tune",
    "compress", "compress_tensors", "decompress", "decompress_tensors", "read_container", "verify",
    "EnecError",
]

__version__ = "0.1.0"
