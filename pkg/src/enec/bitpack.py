"""Group classification and the two packers used for exponent codes.

``hh_pack`` is the hierarchical halving packer: lanes are folded in pairs
(``data[i] |= data[i + half] << width``) until each holds at least a byte,
the low byte of every live lane is emitted, and the remainder is folded
again until no bits are left.  The emitted bytes are padded to an even
count and interleaved into little-endian 16-bit words.  For N >= 16 the
output is exactly N*a/8 bytes with no slack.

``fixed_pack`` is a plain LSB-first bit concatenation for the sign+mantissa
residues, which are wider than the 8-bit lane model of ``hh_pack``.

Array functions operate along the last axis, so a stack of equally sized
blocks can be packed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import AlignmentError, ConsistencyError, LengthError, RangeError, ShapeError
from .scan import exclusive_counts


# --------------------------------------------------------------------------
# hierarchical halving packer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedStream:
    data: bytes
    count: int
    width: int


@lru_cache(maxsize=None)
def _schedule(count: int, width: int) -> tuple[tuple[str, int, int], ...]:
    """Replay the packer's control flow for (N, a).

    Returns ("fold", new_length, shift) and ("emit", length, 0) steps in
    execution order.  The control flow depends only on N and a, which is
    what makes the unpacker possible.
    """
    steps = []
    length = count
    while width > 0:
        while length > 1 and width < 8:
            length //= 2
            steps.append(("fold", length, width))
            width *= 2
        steps.append(("emit", length, 0))
        width -= 8
    return tuple(steps)


def packed_size(count: int, width: int) -> int:
    """Byte length of ``hh_pack`` output for ``count`` values of ``width`` bits."""
    emitted = sum(n for op, n, _ in _schedule(count, width) if op == "emit")
    return emitted + (emitted & 1)


def _check_pack_args(count: int, width: int) -> None:
    if count < 1 or count & (count - 1):
        raise ShapeError(f"element count must be a power of two, got {count}")
    if not 1 <= width <= 8:
        raise ShapeError(f"bit width must be in 1..8, got {width}")


def hh_pack_array(values: np.ndarray, width: int) -> np.ndarray:
    """Pack along the last axis; returns uint8 array of shape (..., packed_size)."""
    values = np.asarray(values)
    count = values.shape[-1]
    _check_pack_args(count, width)
    if values.size and int(values.max()) >> width:
        raise ShapeError(f"value does not fit in {width} bits")

    data = values.astype(np.uint16)  # always a fresh copy
    chunks = []
    for op, length, shift in _schedule(count, width):
        if op == "fold":
            data[..., :length] |= data[..., length : 2 * length] << shift
        else:
            chunks.append((data[..., :length] & 0xFF).astype(np.uint8))
            data[..., :length] >>= 8

    normalized = np.concatenate(chunks, axis=-1)
    total = normalized.shape[-1]
    if total & 1:
        pad = np.zeros(normalized.shape[:-1] + (1,), dtype=np.uint8)
        normalized = np.concatenate([normalized, pad], axis=-1)
        total += 1
    half = total // 2
    out = np.empty_like(normalized)
    out[..., 0::2] = normalized[..., :half]
    out[..., 1::2] = normalized[..., half:]
    return out


def hh_unpack_array(packed: np.ndarray, count: int, width: int) -> np.ndarray:
    """Inverse of :func:`hh_pack_array`; returns uint16 values."""
    _check_pack_args(count, width)
    packed = np.asarray(packed, dtype=np.uint8)
    size = packed_size(count, width)
    if packed.shape[-1] != size:
        raise LengthError(
            f"packed stream is {packed.shape[-1]} bytes, expected {size} "
            f"for N={count}, a={width}"
        )
    half = size // 2
    normalized = np.empty_like(packed)
    normalized[..., :half] = packed[..., 0::2]
    normalized[..., half:] = packed[..., 1::2]

    steps = _schedule(count, width)
    offsets = []
    pos = 0
    for op, length, _ in steps:
        if op == "emit":
            offsets.append(pos)
            pos += length

    data = np.zeros(packed.shape[:-1] + (count,), dtype=np.uint16)
    emit_index = len(offsets)
    for op, length, shift in reversed(steps):
        if op == "emit":
            emit_index -= 1
            start = offsets[emit_index]
            chunk = normalized[..., start : start + length].astype(np.uint16)
            data[..., :length] = (data[..., :length] << 8) | chunk
        else:
            data[..., length : 2 * length] = data[..., :length] >> shift
            data[..., :length] &= (1 << shift) - 1
    return data


def hh_pack(data, width: int) -> PackedStream:
    values = np.asarray(data)
    if values.ndim != 1:
        raise ShapeError("hh_pack expects a 1-D array")
    packed = hh_pack_array(values, width)
    return PackedStream(packed.tobytes(), values.shape[0], width)


def hh_unpack(stream: PackedStream) -> np.ndarray:
    packed = np.frombuffer(stream.data, dtype=np.uint8)
    return hh_unpack_array(packed, stream.count, stream.width)


def _power_of_two_runs(count: int) -> list[int]:
    return [1 << bit for bit in range(count.bit_length() - 1, -1, -1) if count >> bit & 1]


def runs_size(count: int, width: int) -> int:
    return sum(packed_size(run, width) for run in _power_of_two_runs(count))


def hh_pack_runs(values: np.ndarray, width: int) -> bytes:
    """Pack an arbitrary-length array as descending power-of-two runs."""
    values = np.asarray(values)
    parts = []
    start = 0
    for run in _power_of_two_runs(values.shape[0]):
        parts.append(hh_pack_array(values[start : start + run], width).tobytes())
        start += run
    return b"".join(parts)


def hh_unpack_runs(buf, count: int, width: int) -> np.ndarray:
    raw = np.frombuffer(buf, dtype=np.uint8)
    if raw.shape[0] != runs_size(count, width):
        raise LengthError(
            f"overflow stream is {raw.shape[0]} bytes, expected {runs_size(count, width)}"
        )
    out = np.empty(count, dtype=np.uint16)
    start = pos = 0
    for run in _power_of_two_runs(count):
        size = packed_size(run, width)
        out[start : start + run] = hh_unpack_array(raw[pos : pos + size], run, width)
        start += run
        pos += size
    return out


# --------------------------------------------------------------------------
# fixed-width packer
# --------------------------------------------------------------------------


def fixed_size(count: int, width: int) -> int:
    return (count * width + 7) // 8


def fixed_pack_array(values: np.ndarray, width: int) -> np.ndarray:
    """LSB-first concatenation of ``width``-bit values along the last axis."""
    if not 1 <= width <= 32:
        raise RangeError(f"width must be in 1..32, got {width}")
    values = np.asarray(values).astype(np.uint32)
    if values.size and int(values.max()) >> width:
        raise RangeError(f"value does not fit in {width} bits")
    lead = values.shape[:-1]
    count = values.shape[-1]
    if width % 8 == 0:
        # byte-aligned: LSB-first bits are just little-endian bytes
        nbytes = width // 8
        as_bytes = values.astype("<u4").view(np.uint8).reshape(lead + (count, 4))
        return np.ascontiguousarray(as_bytes[..., :nbytes]).reshape(lead + (count * nbytes,))
    shifts = np.arange(width, dtype=np.uint32)
    bits = ((values[..., None] >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(lead + (count * width,)), axis=-1, bitorder="little")


def fixed_unpack_array(packed: np.ndarray, count: int, width: int) -> np.ndarray:
    if not 1 <= width <= 32:
        raise RangeError(f"width must be in 1..32, got {width}")
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.shape[-1] != fixed_size(count, width):
        raise LengthError(
            f"fixed stream is {packed.shape[-1]} bytes, expected {fixed_size(count, width)}"
        )
    lead = packed.shape[:-1]
    if width % 8 == 0:
        nbytes = width // 8
        wide = np.zeros(lead + (count, 4), dtype=np.uint8)
        wide[..., :nbytes] = packed.reshape(lead + (count, nbytes))
        return wide.view("<u4").reshape(lead + (count,)).astype(np.uint32)
    bits = np.unpackbits(packed, axis=-1, count=count * width, bitorder="little")
    bits = bits.reshape(lead + (count, width)).astype(np.uint32)
    weights = np.uint32(1) << np.arange(width, dtype=np.uint32)
    return (bits * weights).sum(axis=-1, dtype=np.uint32)


def fixed_pack(data, width: int) -> bytes:
    return fixed_pack_array(np.asarray(data).ravel(), width).tobytes()


def fixed_unpack(buf, width: int, count: int) -> np.ndarray:
    return fixed_unpack_array(np.frombuffer(buf, dtype=np.uint8), count, width)


# --------------------------------------------------------------------------
# two-level group classification
# --------------------------------------------------------------------------


@dataclass
class GroupClassification:
    """Split of mapped codes into a group mask, low bits and overflow high bits.

    ``mask`` holds one 0/1 entry per group (1 = anomalous).  ``overflow``
    holds ``code >> m`` for every element of every anomalous group, in
    element order.
    """

    mask: np.ndarray
    low_bits: np.ndarray
    overflow: np.ndarray


def group_or(codes: np.ndarray, group_length: int) -> np.ndarray:
    """Bitwise OR of each group of ``group_length`` codes along the last axis."""
    codes = np.asarray(codes)
    count = codes.shape[-1]
    if count % group_length:
        raise AlignmentError(f"{count} codes do not split into groups of {group_length}")
    grouped = codes.reshape(codes.shape[:-1] + (count // group_length, group_length))
    return np.bitwise_or.reduce(grouped, axis=-1)


def group_classify(codes, group_length: int, m: int, n: int) -> GroupClassification:
    codes = np.asarray(codes, dtype=np.uint16)
    if codes.size and int(codes.max()) >> n:
        raise RangeError(f"code does not fit in {n} bits")
    mask = (group_or(codes, group_length) >> m != 0).astype(np.uint8)
    low = codes & ((1 << m) - 1)
    grouped = codes.reshape(-1, group_length)
    overflow = (grouped[mask.astype(bool)] >> m).ravel()
    return GroupClassification(mask, low, overflow)


def overflow_positions(mask: np.ndarray, group_length: int) -> np.ndarray:
    """Start of each group's slice in the overflow array (``L`` x exclusive count)."""
    return exclusive_counts(mask) * group_length


def classify_inverse(cls: GroupClassification, group_length: int, m: int) -> np.ndarray:
    mask = np.asarray(cls.mask).astype(bool)
    expected = group_length * int(mask.sum())
    if cls.overflow.shape[0] != expected:
        raise ConsistencyError(
            f"overflow holds {cls.overflow.shape[0]} values, mask implies {expected}"
        )
    codes = np.asarray(cls.low_bits, dtype=np.uint16).copy()
    if expected:
        starts = overflow_positions(cls.mask, group_length)[mask]
        gather = (starts[:, None] + np.arange(group_length)).ravel()
        grouped = codes.reshape(-1, group_length)
        grouped[mask] |= (cls.overflow[gather].astype(np.uint16) << m).reshape(-1, group_length)
    return codes


def pack_mask(mask: np.ndarray) -> bytes:
    """Group g goes to bit (g % 8) of byte (g // 8)."""
    return np.packbits(np.asarray(mask, dtype=np.uint8), bitorder="little").tobytes()


def unpack_mask(buf, groups: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=groups, bitorder="little")
