"""Exponent / residue separation for BF16, FP16 and FP32 payloads.

Nothing here interprets values: NaN, Inf, denormals and negative zero
are just bit patterns, so ``combine(split(x))`` is the identity on every
element-aligned byte string.

The residue of an element is ``sign << mantissa_bits | mantissa``; the
residue stream is those values concatenated LSB-first by
:func:`enec.bitpack.fixed_pack`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitpack import fixed_pack, fixed_size, fixed_unpack
from .errors import ConsistencyError, FormatError, LengthError


@dataclass(frozen=True)
class FloatFormat:
    name: str
    code: int  # container format code
    total_bits: int
    exp_bits: int
    mantissa_bits: int

    @property
    def item_size(self) -> int:
        return self.total_bits // 8

    @property
    def residue_bits(self) -> int:
        return 1 + self.mantissa_bits

    @property
    def word_dtype(self) -> np.dtype:
        return np.dtype("<u2") if self.total_bits == 16 else np.dtype("<u4")

    def __str__(self) -> str:
        return self.name


FP32 = FloatFormat("FP32", 0, 32, 8, 23)
FP16 = FloatFormat("FP16", 1, 16, 5, 10)
BF16 = FloatFormat("BF16", 2, 16, 8, 7)
FORMATS = (FP32, FP16, BF16)

_ALIASES = {
    "bf16": BF16,
    "bfloat16": BF16,
    "fp16": FP16,
    "f16": FP16,
    "float16": FP16,
    "half": FP16,
    "fp32": FP32,
    "f32": FP32,
    "float32": FP32,
    "float": FP32,
}


def get_format(name: str | FloatFormat) -> FloatFormat:
    if isinstance(name, FloatFormat):
        return name
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise FormatError(
            f"unsupported dtype {name!r}; expected one of BF16, FP16, FP32"
        ) from None


def format_from_code(code: int) -> FloatFormat:
    for fmt in FORMATS:
        if fmt.code == code:
            return fmt
    raise FormatError(f"unknown format code {code}")


def as_words(raw, fmt: FloatFormat) -> np.ndarray:
    """View an element-aligned byte buffer as little-endian words."""
    buf = memoryview(raw).cast("B")
    if len(buf) % fmt.item_size:
        raise LengthError(
            f"{len(buf)} bytes is not a whole number of {fmt.name} elements"
        )
    return np.frombuffer(buf, dtype=fmt.word_dtype)


def split_fields(words: np.ndarray, fmt: FloatFormat) -> tuple[np.ndarray, np.ndarray]:
    """Return (exponents as uint16, residues as uint32) for an array of words."""
    mb = fmt.mantissa_bits
    words = words.astype(np.uint32, copy=False)
    exponents = ((words >> mb) & ((1 << fmt.exp_bits) - 1)).astype(np.uint16)
    sign = words >> (fmt.total_bits - 1)
    residues = (sign << mb) | (words & ((1 << mb) - 1))
    return exponents, residues


def join_fields(exponents: np.ndarray, residues: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    """Inverse of :func:`split_fields`; returns words in ``fmt.word_dtype``."""
    mb = fmt.mantissa_bits
    residues = residues.astype(np.uint32, copy=False)
    sign = residues >> mb
    words = (
        (sign << (fmt.total_bits - 1))
        | (exponents.astype(np.uint32) << mb)
        | (residues & ((1 << mb) - 1))
    )
    return words.astype(fmt.word_dtype)


@dataclass
class SplitPayload:
    exponents: np.ndarray
    residue: bytes
    element_count: int


def split(raw, fmt: FloatFormat | str) -> SplitPayload:
    fmt = get_format(fmt)
    words = as_words(raw, fmt)
    exponents, residues = split_fields(words, fmt)
    return SplitPayload(exponents, fixed_pack(residues, fmt.residue_bits), words.shape[0])


def combine(payload: SplitPayload, fmt: FloatFormat | str) -> bytes:
    fmt = get_format(fmt)
    count = payload.element_count
    exponents = np.asarray(payload.exponents)
    if exponents.shape != (count,):
        raise ConsistencyError(
            f"{exponents.shape[0] if exponents.ndim else 0} exponents for {count} elements"
        )
    if len(payload.residue) != fixed_size(count, fmt.residue_bits):
        raise ConsistencyError(
            f"residue stream is {len(payload.residue)} bytes, "
            f"expected {fixed_size(count, fmt.residue_bits)}"
        )
    if count and int(exponents.max()) >> fmt.exp_bits:
        raise ConsistencyError(f"exponent does not fit in {fmt.exp_bits} bits")
    residues = fixed_unpack(payload.residue, fmt.residue_bits, count)
    return join_fields(exponents, residues, fmt).tobytes()
