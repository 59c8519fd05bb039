"""Prefix sums over N x 16 tiles without intra-row element dependencies.

The tile is read as one flattened row-major array.  Rows are 16 lanes
wide, the width of one 32-byte segment of 16-bit lanes, and no step
below ever adds two elements of the same row to each other directly:

1. transpose, scan down the 16 rows of the transposed matrix with
   log2(16) whole-row additions, transpose back (row-local sums ``R``);
2. scan a copy ``C`` of ``R`` across rows with log2(N) whole-row
   additions, take its last column as inclusive row totals, shift it into
   exclusive offsets and broadcast-add those to ``R``.

Every function accepts extra leading batch dimensions, so many tiles can
be scanned with the same handful of array operations.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

LANES = 16


def _check_tile(tile: np.ndarray) -> None:
    if tile.ndim < 2 or tile.shape[-1] != LANES:
        raise ShapeError(f"tile must be (..., N, {LANES}), got {tile.shape}")
    rows = tile.shape[-2]
    if rows < 1 or rows & (rows - 1):
        raise ShapeError(f"tile row count must be a power of two, got {rows}")


def _hillis_steele(a: np.ndarray, axis: int) -> np.ndarray:
    """Inclusive scan along ``axis`` using whole-slice shifted additions."""
    a = np.moveaxis(a, axis, -1).copy()
    size = a.shape[-1]
    step = 1
    while step < size:
        shifted = a[..., :-step].copy()
        a[..., step:] += shifted
        step *= 2
    return np.moveaxis(a, -1, axis)


def intra_row_scan(tile: np.ndarray) -> np.ndarray:
    """Stage 1: per-row inclusive prefix sums via transposition (matrix R)."""
    tile = np.asarray(tile)
    _check_tile(tile)
    transposed = np.swapaxes(tile, -1, -2).astype(np.int64)
    # lanes are now rows; each addition moves whole rows of the transposed matrix
    scanned = _hillis_steele(transposed, axis=-2)
    return np.swapaxes(scanned, -1, -2)


def exclusive_offsets(inclusive: np.ndarray) -> np.ndarray:
    """Drop the last element, put a zero on top."""
    inclusive = np.asarray(inclusive)
    out = np.zeros_like(inclusive)
    out[..., 1:] = inclusive[..., :-1]
    return out


def idd_scan(tile: np.ndarray) -> np.ndarray:
    """Inclusive prefix sum of the flattened tile, returned in tile shape."""
    rows = intra_row_scan(tile)
    carry = _hillis_steele(rows, axis=-2)
    row_offsets = exclusive_offsets(carry[..., :, -1])
    return rows + row_offsets[..., :, None]


def serial_scan(values) -> np.ndarray:
    """Reference inclusive prefix sum, one element at a time."""
    values = np.asarray(values, dtype=np.int64).ravel()
    out = np.empty_like(values)
    total = 0
    for i, v in enumerate(values.tolist()):
        total += v
        out[i] = total
    return out


def tile_rows(count: int) -> int:
    """Smallest power-of-two row count whose tile holds ``count`` values."""
    rows = max(1, -(-count // LANES))
    return 1 << (rows - 1).bit_length()


def exclusive_counts(flags: np.ndarray) -> np.ndarray:
    """Exclusive prefix counts of a (..., G) array of 0/1 flags.

    Flags are zero-padded into power-of-two tiles, scanned with
    :func:`idd_scan` and shifted by one.
    """
    flags = np.asarray(flags)
    count = flags.shape[-1]
    rows = tile_rows(count)
    padded = np.zeros(flags.shape[:-1] + (rows * LANES,), dtype=np.int64)
    padded[..., :count] = flags
    inclusive = idd_scan(padded.reshape(flags.shape[:-1] + (rows, LANES)))
    flat = inclusive.reshape(flags.shape[:-1] + (rows * LANES,))
    return exclusive_offsets(flat)[..., :count]
