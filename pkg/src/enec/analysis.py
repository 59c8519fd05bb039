"""Exponent statistics: histogram, entropy, occupied range, rank-vs-value fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, EmptyInput, RangeError


@dataclass(frozen=True)
class ExponentHistogram:
    counts: np.ndarray  # length 2**exp_bits
    total: int
    low: int
    high: int

    @property
    def exp_bits(self) -> int:
        return int(self.counts.shape[0]).bit_length() - 1

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total

    @property
    def support(self) -> np.ndarray:
        """Exponent values with a nonzero count, ascending."""
        return np.flatnonzero(self.counts)

    @classmethod
    def from_counts(cls, counts) -> "ExponentHistogram":
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 1 or counts.shape[0] & (counts.shape[0] - 1):
            raise RangeError("counts must be a 1-D array of length 2**E")
        if (counts < 0).any():
            raise RangeError("counts must be non-negative")
        present = np.flatnonzero(counts)
        if present.size == 0:
            raise EmptyInput("histogram is empty")
        return cls(counts, int(counts.sum()), int(present[0]), int(present[-1]))

    def scaled(self, factor: int) -> "ExponentHistogram":
        return ExponentHistogram.from_counts(self.counts * factor)


def count_exponents(exponents: np.ndarray, exp_bits: int) -> np.ndarray:
    """Raw bincount over all 2**exp_bits bins (may be all zero)."""
    exponents = np.asarray(exponents).ravel()
    size = 1 << exp_bits
    if exponents.size and int(exponents.max()) >= size:
        raise RangeError(f"exponent {int(exponents.max())} does not fit in {exp_bits} bits")
    return np.bincount(exponents, minlength=size).astype(np.int64)


def build_histogram(exponents, exp_bits: int) -> ExponentHistogram:
    exponents = np.asarray(exponents)
    if exponents.size == 0:
        raise EmptyInput("cannot build a histogram of zero exponents")
    if (exponents < 0).any():
        raise RangeError("exponents must be non-negative")
    return ExponentHistogram.from_counts(count_exponents(exponents, exp_bits))


def entropy(hist: ExponentHistogram) -> float:
    """Shannon entropy of the exponent distribution, in bits."""
    p = hist.counts[hist.counts > 0] / hist.total
    return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class RankFit:
    slope: float
    intercept: float
    r_squared: float


def frequency_ranks(hist: ExponentHistogram) -> tuple[np.ndarray, np.ndarray]:
    """(exponent values, 1-based frequency ranks); equal counts rank smaller values first."""
    values = hist.support
    order = np.lexsort((values, -hist.counts[values]))
    ranks = np.empty(values.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, values.shape[0] + 1)
    return values, ranks


def rank_fit(hist: ExponentHistogram) -> RankFit:
    """Least-squares line of frequency rank against exponent value."""
    values, ranks = frequency_ranks(hist)
    if values.shape[0] < 2:
        raise DegenerateInput("rank fit needs at least two distinct exponents")
    x = values.astype(np.float64)
    y = ranks.astype(np.float64)
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = ((x - xm) * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    residual = ((y - (slope * x + intercept)) ** 2).sum()
    total = ((y - ym) ** 2).sum()
    r2 = 1.0 - residual / total
    return RankFit(float(slope), float(intercept), float(min(1.0, max(0.0, r2))))
