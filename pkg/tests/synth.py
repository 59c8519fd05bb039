"""Synthetic weight generators and independent oracles for the test suite.

The exponent laws come from a zero-mean Gaussian weight distribution: the
mass of exponent e is the probability that |w| falls in [2**(e-bias),
2**(e-bias+1)).  The BF16/FP32 law is truncated below the top few
exponents and given a small geometric outlier tail above, which is what
makes 123 the cheapest mapping base while 122 is the most frequent
exponent.  Signs and mantissas are uniform.

Nothing here imports the package, so these values can serve as oracles.
"""

from __future__ import annotations

import math

import numpy as np

FORMATS = {
    # name: (total bits, exponent bits, mantissa bits)
    "BF16": (16, 8, 7),
    "FP16": (16, 5, 10),
    "FP32": (32, 8, 23),
}


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def gaussian_exponent_law(sigma: float, bias: int, exp_bits: int) -> np.ndarray:
    """Exponent probabilities of |N(0, sigma^2)| samples, normal range only."""
    size = 1 << exp_bits
    p = np.zeros(size)
    for e in range(1, size - 1):
        lo, hi = 2.0 ** (e - bias), 2.0 ** (e - bias + 1)
        p[e] = 2.0 * (_phi(hi / sigma) - _phi(lo / sigma))
    p[0] = 2.0 * (_phi(2.0 ** (1 - bias) / sigma) - 0.5)
    p[p < 1e-9] = 0.0
    return p / p.sum()


def bf16_law(
    sigma: float = 0.035,
    low: int = 100,
    top: int = 123,
    tail_mass: float = 0.004,
    tail_high: int = 134,
    decay: float = 0.6,
) -> np.ndarray:
    """Calibrated 8-bit exponent law used for BF16 and FP32 weights."""
    p = gaussian_exponent_law(sigma, 127, 8)
    p[:low] = 0.0
    p[top + 1:] = 0.0
    p /= p.sum()
    tail = decay ** np.arange(tail_high - top)
    tail = tail / tail.sum() * tail_mass
    p *= 1.0 - tail_mass
    p[top + 1: tail_high + 1] += tail
    return p


def fp16_law(sigma: float = 0.04) -> np.ndarray:
    return gaussian_exponent_law(sigma, 15, 5)


def law_for(fmt: str) -> np.ndarray:
    return fp16_law() if fmt == "FP16" else bf16_law()


def sample_exponents(law: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(law.shape[0], size=count, p=law).astype(np.uint32)


def assemble(exponents: np.ndarray, fmt: str, rng: np.random.Generator) -> bytes:
    """Little-endian words with the given exponents and random sign/mantissa."""
    total, _, mbits = FORMATS[fmt]
    count = exponents.shape[0]
    sign = rng.integers(0, 2, count, dtype=np.uint64)
    mant = rng.integers(0, 1 << mbits, count, dtype=np.uint64)
    words = (sign << np.uint64(total - 1)) | (exponents.astype(np.uint64) << np.uint64(mbits)) | mant
    dtype = "<u2" if total == 16 else "<u4"
    return words.astype(dtype).tobytes()


def synthetic_weights(fmt: str, count: int, seed: int = 0, law: np.ndarray | None = None) -> bytes:
    rng = np.random.default_rng(seed)
    law = law_for(fmt) if law is None else law
    return assemble(sample_exponents(law, count, rng), fmt, rng)


def exponents_of(raw: bytes, fmt: str) -> np.ndarray:
    total, ebits, mbits = FORMATS[fmt]
    words = np.frombuffer(raw, dtype="<u2" if total == 16 else "<u4").astype(np.uint64)
    return ((words >> np.uint64(mbits)) & np.uint64((1 << ebits) - 1)).astype(np.int64)


# --- oracles written from the definitions, loop by loop ---------------------


def code_of(x: int, b: int, n: int) -> int:
    """Two's-complement n-bit encoding of b - x."""
    d = b - x
    return d if d >= 0 else (1 << n) + d


def exact_cdf(law: np.ndarray, b: int, n: int) -> list[float]:
    """p[w] = P(code fits in w bits) for w = 0..n, by enumeration."""
    p = [0.0] * (n + 1)
    for x, px in enumerate(law):
        if px == 0:
            continue
        code = code_of(x, b, n)
        width = 0
        while code >> width:
            width += 1
        for w in range(width, n + 1):
            p[w] += px
    return p


def formula_bits(n: int, m: int, L: int, p_m: float) -> float:
    return 1.0 / L + n + (m - n) * p_m ** L


def brute_force_tune(law: np.ndarray, lengths=(16, 32, 64, 128, 256, 512, 1024), max_lane: int = 8):
    """Exhaustive (b, n) then (m, L) search straight from the cost definitions."""
    support = [x for x, px in enumerate(law) if px > 0]
    l, h = support[0], support[-1]
    best = None
    for b in range(l, h + 1):
        n = 1
        # smallest n whose window (b - 2**(n-1), b + 2**(n-1)] covers [l, h]
        while not (b - (1 << (n - 1)) < l and h <= b + (1 << (n - 1))):
            n += 1
        cost = sum(law[x] * code_of(x, b, n) for x in support)
        key = (cost, n, b)
        if best is None or key < best:
            best = key
    _, n, b = best
    cdf = exact_cdf(law, b, n)
    choice = None
    for m in range(max(1, n - max_lane), min(n, max_lane) + 1):
        for L in lengths:
            key = (formula_bits(n, m, L, cdf[m]), m, L)
            if choice is None or key < choice:
                choice = key
    bits, m, L = choice
    return (b, n, m, L), bits
