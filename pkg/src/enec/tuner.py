"""Offline search for the (b, n, m, L) tuple of a tensor.

Phase 1 is the exponent histogram (:mod:`enec.analysis`).  Phase 2 scans
every b in [l, h], derives the code width n needed to cover [l, h], and
keeps the pair with the smallest mean code value.  Phase 3 picks the
threshold width m and group length L minimising the expected coded bits
per exponent::

    B_exp = 1/L + n + (m - n) * p(m)**L

where p(m) is the probability that a code fits in m bits.

All comparisons in phase 2 are done on integer counts, so the result is
exactly invariant to scaling the histogram.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .analysis import ExponentHistogram
from .errors import ParamError, WindowError
from .transform import window

DEFAULT_GROUP_LENGTHS = (16, 32, 64, 128, 256, 512, 1024)
MAX_LANE_WIDTH = 8  # packer lane limit for both the low and the overflow stream


@dataclass(frozen=True)
class TunedParams:
    b: int
    n: int
    m: int
    L: int

    def validate(self, exp_bits: int, block_size: int | None = None) -> None:
        if not 0 <= self.b < (1 << exp_bits):
            raise ParamError(f"b={self.b} out of range for {exp_bits}-bit exponents")
        if not 1 <= self.n <= exp_bits + 1:
            raise ParamError(f"n={self.n} must be in 1..{exp_bits + 1}")
        if not 1 <= self.m <= min(self.n, MAX_LANE_WIDTH):
            raise ParamError(f"m={self.m} must be in 1..min(n, {MAX_LANE_WIDTH})")
        if self.n - self.m > MAX_LANE_WIDTH:
            raise ParamError(f"n - m = {self.n - self.m} exceeds {MAX_LANE_WIDTH}")
        if self.L < 16 or self.L & (self.L - 1):
            raise ParamError(f"L={self.L} must be a power of two >= 16")
        if block_size is not None and block_size % self.L:
            raise ParamError(f"L={self.L} does not divide block size {block_size}")

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.b, self.n, self.m, self.L)

    @classmethod
    def parse(cls, text: str) -> "TunedParams":
        try:
            b, n, m, L = (int(part) for part in text.split(","))
        except ValueError:
            raise ParamError(f"expected b,n,m,L but got {text!r}") from None
        return cls(b, n, m, L)


@dataclass(frozen=True)
class BitwidthCdf:
    """``p[w]`` = probability a code fits in ``w`` bits, for w = 0..n."""

    p: np.ndarray

    @property
    def n(self) -> int:
        return self.p.shape[0] - 1


def required_bitwidth(b: int, l: int, h: int) -> int:
    """Smallest total code width whose window around b covers [l, h]."""
    below = (b - l).bit_length() if b > l else 0  # floor(log2(b-l)) + 1
    above = (h - b - 1).bit_length() if h > b else 0  # ceil(log2(h-b))
    return max(below, above) + 1


def _codes(values: np.ndarray, b: int, n: int) -> np.ndarray:
    lo, hi = window(b, n)
    if values.size and (values.min() < lo or values.max() > hi):
        raise WindowError(f"exponents outside the window of b={b}, n={n}")
    return (b - values) % (1 << n)


def mapping_cost(hist: ExponentHistogram, b: int, n: int) -> float:
    """Probability-weighted mean code value D."""
    values = hist.support
    codes = _codes(values, b, n)
    return float((hist.counts[values] * codes).sum() / hist.total)


def search_linear_params(hist: ExponentHistogram) -> tuple[int, int]:
    values = hist.support
    weights = hist.counts[values]
    candidates = np.arange(hist.low, hist.high + 1)
    widths = np.array([required_bitwidth(int(b), hist.low, hist.high) for b in candidates])
    codes = (candidates[:, None] - values[None, :]) % (1 << widths)[:, None]
    weighted = codes @ weights  # exact int64: counts * codes stays far below 2**63
    best = np.lexsort((candidates, widths, weighted))[0]
    return int(candidates[best]), int(widths[best])


def bitwidth_cdf(hist: ExponentHistogram, b: int, n: int) -> BitwidthCdf:
    values = hist.support
    codes = _codes(values, b, n)
    widths = np.array([int(c).bit_length() for c in codes])
    per_width = np.bincount(widths, weights=hist.counts[values], minlength=n + 1)
    p = np.cumsum(per_width) / hist.total
    p[-1] = 1.0
    return BitwidthCdf(p)


def expected_bits(n: int, m: int, L: int, p_m: float) -> float:
    return 1.0 / L + n + (m - n) * p_m**L


def threshold_candidates(n: int) -> range:
    return range(max(1, n - MAX_LANE_WIDTH), min(n, MAX_LANE_WIDTH) + 1)


def select_threshold_and_group(
    cdf: BitwidthCdf, n: int, group_lengths: Iterable[int] = DEFAULT_GROUP_LENGTHS
) -> tuple[int, int]:
    best = None
    for m in threshold_candidates(n):
        for L in sorted(group_lengths):
            key = (expected_bits(n, m, L, float(cdf.p[m])), m, L)
            if best is None or key < best:
                best = key
    return best[1], best[2]


def tune(
    hist: ExponentHistogram, group_lengths: Sequence[int] = DEFAULT_GROUP_LENGTHS
) -> TunedParams:
    b, n = search_linear_params(hist)
    cdf = bitwidth_cdf(hist, b, n)
    m, L = select_threshold_and_group(cdf, n, group_lengths)
    return TunedParams(b, n, m, L)


def predicted_bits(hist: ExponentHistogram, params: TunedParams) -> float:
    """B_exp for ``params`` on this histogram (raises if the window is violated)."""
    cdf = bitwidth_cdf(hist, params.b, params.n)
    return expected_bits(params.n, params.m, params.L, float(cdf.p[params.m]))


def group_lengths_for(block_size: int, candidates: Iterable[int] = DEFAULT_GROUP_LENGTHS) -> tuple[int, ...]:
    usable = tuple(L for L in candidates if L <= block_size and block_size % L == 0)
    if not usable:
        raise ParamError(f"no group length candidate divides block size {block_size}")
    return usable
