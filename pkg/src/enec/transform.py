"""Branch-free exponent mapping ``y = (b - x) mod 2**n`` and its inverse.

Codes at or above ``2**(n-1)`` stand for negative differences (two's
complement), so the map is a bijection from the window
``(b - 2**(n-1), b + 2**(n-1)]`` onto ``[0, 2**n)``.  Exponents close to
``b`` get small codes.

The array forms run on uint16 lanes with subtract/negate/mask only; there
is no per-element conditional anywhere on the data path.
"""

from __future__ import annotations

import numpy as np

from .errors import WindowError


def window(b: int, n: int) -> tuple[int, int]:
    """Inclusive (lowest, highest) exponent representable under (b, n)."""
    half = 1 << (n - 1)
    return b - half + 1, b + half


def in_window(x: int, b: int, n: int) -> bool:
    lo, hi = window(b, n)
    return lo <= x <= hi


def forward_map(x: int, b: int, n: int) -> int:
    if not in_window(x, b, n):
        raise WindowError(f"exponent {x} outside the window of b={b}, n={n}")
    return (b - x) % (1 << n)


def inverse_map(y: int, b: int, n: int) -> int:
    half = 1 << (n - 1)
    signed = (y ^ half) - half
    return b - signed


def forward_map_array(x: np.ndarray, b: int, n: int, out: np.ndarray | None = None) -> np.ndarray:
    """Vector form of :func:`forward_map` on uint16 lanes.

    No window check; callers test the window separately (see
    :func:`window_violations`) and route offending blocks elsewhere.
    """
    x = np.asarray(x, dtype=np.uint16)
    if out is None:
        out = np.empty_like(x)
    np.subtract(x, np.uint16(b), out=out)  # x - b (wraps mod 2**16)
    np.negative(out, out=out)              # b - x
    np.bitwise_and(out, np.uint16((1 << n) - 1), out=out)
    return out


def inverse_map_array(y: np.ndarray, b: int, n: int, out: np.ndarray | None = None) -> np.ndarray:
    """Vector form of :func:`inverse_map`: ``x = b - sext_n(y)`` on uint16 lanes."""
    y = np.asarray(y, dtype=np.uint16)
    if out is None:
        out = np.empty_like(y)
    half = np.uint16(1 << (n - 1))
    np.bitwise_xor(y, half, out=out)
    np.subtract(out, half, out=out)        # sign-extended difference mod 2**16
    np.subtract(np.uint16(b), out, out=out)
    return out


def window_violations(x: np.ndarray, b: int, n: int) -> np.ndarray:
    """Boolean array marking exponents that (b, n) cannot represent."""
    lo, hi = window(b, n)
    x = np.asarray(x)
    return (x < lo) | (x > hi)
