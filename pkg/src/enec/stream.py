"""Block-parallel ``.enec`` container: encoder, decoder, verification, V0 ratio.

File layout (all integers little-endian)::

    header      4s magic "ENEC" | u16 version | u8 format | u8 flags
                | u32 block_size | u32 tensor_count | u32 crc32
    tensor table, per tensor:
                u16 name_len | name (UTF-8) | u8 format | u64 element_count
                | u8 b | u8 n | u8 m | u32 L
                | per block: u64 offset | u32 size | u8 flags
    payloads    concatenated block payloads; offsets count from the first
                payload byte

The CRC-32 covers every byte after the header.  The header format code is
0xFF when tensors of different formats share a file.

A coded block holds, in order: the group mask (one bit per group, LSB
first), the low m bits of every code packed by ``hh_pack``, a u32 count of
anomalous groups followed by their high (n - m) bits packed as
power-of-two runs, and the sign+mantissa residues packed at fixed width.
A short tail block is zero-padded to max(L, next power of two) codes; the
residues are never padded.  A block whose exponents fall outside the
(b, n) window is stored verbatim with flag bit 0 set.
"""

from __future__ import annotations

import logging
import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import bitpack
from .analysis import ExponentHistogram, count_exponents
from .errors import (
    ChecksumError,
    ConsistencyError,
    EnecError,
    MagicError,
    MismatchError,
    ParamError,
    TruncationError,
    VersionError,
)
from .fpsplit import FloatFormat, as_words, format_from_code, get_format, join_fields, split_fields
from .transform import forward_map_array, inverse_map_array, window_violations
from .tuner import TunedParams, group_lengths_for, predicted_bits, tune

logger = logging.getLogger(__name__)

MAGIC = b"ENEC"
VERSION = 1
DEFAULT_BLOCK_SIZE = 16384
CHUNK_BLOCKS = 64  # blocks handed to one worker task
MIXED_FORMAT = 0xFF
FLAG_SAFETENSORS = 0x01
BLOCK_RAW = 0x01

HEADER = struct.Struct("<4sHBBIII")
RECORD = struct.Struct("<BQBBBI")
DIRECTORY_ENTRY = struct.Struct("<QIB")
NAME_LEN = struct.Struct("<H")
COUNT = struct.Struct("<I")


# --------------------------------------------------------------------------
# data model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FileHeader:
    version: int
    format_code: int
    flags: int
    block_size: int
    tensor_count: int
    checksum: int


@dataclass(frozen=True)
class BlockEntry:
    offset: int
    size: int
    flags: int

    @property
    def raw(self) -> bool:
        return bool(self.flags & BLOCK_RAW)


@dataclass
class TensorRecord:
    name: str
    fmt: FloatFormat
    element_count: int
    params: TunedParams
    blocks: list[BlockEntry] = field(default_factory=list)


@dataclass
class CompressedFile:
    header: FileHeader
    records: list[TensorRecord]
    payload: memoryview

    def block_payload(self, record: TensorRecord, index: int) -> memoryview:
        entry = record.blocks[index]
        return self.payload[entry.offset : entry.offset + entry.size]


@dataclass
class TensorInput:
    name: str
    data: object  # any buffer
    fmt: FloatFormat
    params: TunedParams | None = None


@dataclass
class DecodedTensor:
    name: str
    fmt: FloatFormat
    data: bytes


@dataclass(frozen=True)
class RatioReport:
    original_bytes: int
    compressed_bytes: int
    compression_ratio: float
    exponent_bits_per_element: float
    formula_ratio: float


# --------------------------------------------------------------------------
# block geometry
# --------------------------------------------------------------------------


def block_count(element_count: int, block_size: int) -> int:
    return -(-element_count // block_size)


def padded_count(count: int, group_length: int) -> int:
    """Code-array length a block of ``count`` elements is packed at."""
    return max(group_length, 1 << (count - 1).bit_length())


def section_sizes(count: int, fmt: FloatFormat, params: TunedParams, anomalous: int) -> dict[str, int]:
    """Byte length of every section of a coded block."""
    padded = padded_count(count, params.L)
    groups = padded // params.L
    high = params.n - params.m
    return {
        "mask": -(-groups // 8),
        "low": bitpack.packed_size(padded, params.m),
        "overflow": COUNT.size + (bitpack.runs_size(anomalous * params.L, high) if high else 0),
        "residue": bitpack.fixed_size(count, fmt.residue_bits),
    }


def check_block_size(block_size: int) -> None:
    if block_size < 16 or block_size & (block_size - 1):
        raise ParamError(f"block size must be a power of two >= 16, got {block_size}")


def _run(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# encoding
# --------------------------------------------------------------------------


def _encode_stack(
    exps: np.ndarray,
    residues: np.ndarray,
    raw_words: np.ndarray,
    count: int,
    fmt: FloatFormat,
    params: TunedParams,
) -> list[tuple[bytes, int]]:
    """Encode K blocks of ``count`` elements each (arrays shaped (K, count))."""
    b, n, m, L = params.astuple()
    stack = exps.shape[0]
    padded = padded_count(count, L)

    codes = np.zeros((stack, padded), dtype=np.uint16)
    forward_map_array(exps, b, n, out=codes[:, :count])
    outside = window_violations(exps, b, n).any(axis=1)

    groups = padded // L
    mask = (bitpack.group_or(codes, L) >> m) != 0
    mask_bytes = np.packbits(mask.astype(np.uint8), axis=-1, bitorder="little")
    low = bitpack.hh_pack_array(codes & np.uint16((1 << m) - 1), m)
    packed_residues = bitpack.fixed_pack_array(residues, fmt.residue_bits)
    grouped = codes.reshape(stack, groups, L)

    out = []
    for k in range(stack):
        if outside[k]:
            out.append((raw_words[k].tobytes(), BLOCK_RAW))
            continue
        anomalous = grouped[k][mask[k]]
        parts = [mask_bytes[k].tobytes(), low[k].tobytes(), COUNT.pack(anomalous.shape[0])]
        if anomalous.size:
            parts.append(bitpack.hh_pack_runs((anomalous >> m).ravel(), n - m))
        parts.append(packed_residues[k].tobytes())
        out.append((b"".join(parts), 0))
    return out


def _encode_chunk(job) -> list[tuple[bytes, int]]:
    words, fmt, params, block_size = job
    exps, residues = split_fields(words, fmt)
    full = words.shape[0] // block_size
    out = []
    if full:
        cut = full * block_size
        out += _encode_stack(
            exps[:cut].reshape(full, block_size),
            residues[:cut].reshape(full, block_size),
            words[:cut].reshape(full, block_size),
            block_size,
            fmt,
            params,
        )
    tail = words.shape[0] - full * block_size
    if tail:
        cut = full * block_size
        out += _encode_stack(
            exps[None, cut:], residues[None, cut:], words[None, cut:], tail, fmt, params
        )
    return out


def _histogram_chunk(job) -> np.ndarray:
    words, fmt = job
    exps = (words >> fmt.mantissa_bits) & ((1 << fmt.exp_bits) - 1)
    return count_exponents(exps.astype(np.uint16), fmt.exp_bits)


def _chunks(words: np.ndarray, block_size: int) -> list[np.ndarray]:
    step = block_size * CHUNK_BLOCKS
    return [words[i : i + step] for i in range(0, words.shape[0], step)]


def tensor_histogram(words: np.ndarray, fmt: FloatFormat, workers: int = 1) -> ExponentHistogram:
    parts = _run(_histogram_chunk, [(c, fmt) for c in _chunks(words, DEFAULT_BLOCK_SIZE)], workers)
    return ExponentHistogram.from_counts(np.sum(parts, axis=0))


def choose_params(
    words: np.ndarray, fmt: FloatFormat, block_size: int, workers: int = 1
) -> TunedParams:
    lengths = group_lengths_for(block_size)
    if words.shape[0] == 0:
        return TunedParams(0, 1, 1, lengths[0])
    return tune(tensor_histogram(words, fmt, workers), lengths)


def _write_container(
    records: list[TensorRecord], payloads: list[bytes], block_size: int, flags: int
) -> bytes:
    formats = {r.fmt.code for r in records}
    format_code = formats.pop() if len(formats) == 1 else MIXED_FORMAT
    table = bytearray()
    for rec in records:
        name = rec.name.encode("utf-8")
        table += NAME_LEN.pack(len(name)) + name
        table += RECORD.pack(rec.fmt.code, rec.element_count, *rec.params.astuple())
        for entry in rec.blocks:
            table += DIRECTORY_ENTRY.pack(entry.offset, entry.size, entry.flags)
    body = b"".join([bytes(table), *payloads])
    checksum = zlib.crc32(body)
    header = HEADER.pack(MAGIC, VERSION, format_code, flags, block_size, len(records), checksum)
    return header + body


def compress_tensors(
    tensors: Iterable[TensorInput],
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    flags: int = 0,
) -> bytes:
    """Compress several tensors into one container.

    Output bytes depend only on the inputs, parameters and block size,
    never on ``workers``.
    """
    check_block_size(block_size)
    records: list[TensorRecord] = []
    jobs = []
    owners = []
    for tensor in tensors:
        fmt = get_format(tensor.fmt)
        words = as_words(tensor.data, fmt)
        params = tensor.params or choose_params(words, fmt, block_size, workers)
        params.validate(fmt.exp_bits, block_size)
        records.append(TensorRecord(tensor.name, fmt, words.shape[0], params))
        for chunk in _chunks(words, block_size):
            jobs.append((chunk, fmt, params, block_size))
            owners.append(len(records) - 1)

    results = _run(_encode_chunk, jobs, workers)

    payloads = []
    offset = 0
    for owner, blocks in zip(owners, results):
        rec = records[owner]
        for payload, block_flags in blocks:
            rec.blocks.append(BlockEntry(offset, len(payload), block_flags))
            payloads.append(payload)
            offset += len(payload)
    for rec in records:
        raw_blocks = sum(e.raw for e in rec.blocks)
        if raw_blocks:
            logger.info("%s: %d of %d blocks stored raw", rec.name or "<tensor>", raw_blocks, len(rec.blocks))
    return _write_container(records, payloads, block_size, flags)


def compress(
    raw,
    fmt: FloatFormat | str,
    params: TunedParams | None = None,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    name: str = "",
) -> bytes:
    """Compress one tensor (``params=None`` tunes on the data first)."""
    return compress_tensors([TensorInput(name, raw, get_format(fmt), params)], workers, block_size)


# --------------------------------------------------------------------------
# container parsing
# --------------------------------------------------------------------------


def _need(buf, pos: int, size: int, section: str) -> None:
    if pos + size > len(buf):
        raise TruncationError(section, pos + size, len(buf))


def _parse_body(view: memoryview, header: FileHeader) -> tuple[list[TensorRecord], memoryview]:
    pos = HEADER.size
    records = []
    for index in range(header.tensor_count):
        section = f"tensor table entry {index}"
        _need(view, pos, NAME_LEN.size, section)
        (name_len,) = NAME_LEN.unpack_from(view, pos)
        pos += NAME_LEN.size
        _need(view, pos, name_len + RECORD.size, section)
        name = bytes(view[pos : pos + name_len]).decode("utf-8")
        pos += name_len
        code, count, b, n, m, L = RECORD.unpack_from(view, pos)
        pos += RECORD.size
        fmt = format_from_code(code)
        params = TunedParams(b, n, m, L)
        if count:
            params.validate(fmt.exp_bits, header.block_size)
        nblocks = block_count(count, header.block_size)
        _need(view, pos, nblocks * DIRECTORY_ENTRY.size, f"block directory of tensor {index}")
        blocks = [
            BlockEntry(*DIRECTORY_ENTRY.unpack_from(view, pos + i * DIRECTORY_ENTRY.size))
            for i in range(nblocks)
        ]
        pos += nblocks * DIRECTORY_ENTRY.size
        records.append(TensorRecord(name, fmt, count, params, blocks))

    payload = view[pos:]
    end = 0
    for index, rec in enumerate(records):
        for i, entry in enumerate(rec.blocks):
            if entry.offset < end:
                raise ConsistencyError(f"block {i} of tensor {index} overlaps its predecessor")
            _need(payload, entry.offset, entry.size, f"payload of block {i}, tensor {index}")
            end = entry.offset + entry.size
    return records, payload


def read_container(blob, verify_checksum: bool = True) -> CompressedFile:
    """Parse and check a container.

    A file that fails its checksum because it was cut short raises
    :class:`TruncationError` naming the first incomplete section; any other
    checksum failure raises :class:`ChecksumError`.
    """
    view = memoryview(blob).cast("B")
    if len(view) < 4 or bytes(view[:4]) != MAGIC:
        raise MagicError("not an ENEC container (bad magic)")
    _need(view, 0, HEADER.size, "header")
    magic, version, format_code, flags, block_size, tensor_count, checksum = HEADER.unpack_from(view)
    if version != VERSION:
        raise VersionError(f"unsupported container version {version} (expected {VERSION})")
    header = FileHeader(version, format_code, flags, block_size, tensor_count, checksum)
    if verify_checksum and zlib.crc32(view[HEADER.size :]) != checksum:
        try:
            check_block_size(block_size)
            _parse_body(view, header)
        except TruncationError:
            raise
        except (EnecError, UnicodeDecodeError):
            pass
        raise ChecksumError("CRC-32 mismatch over table and payloads")
    check_block_size(block_size)
    records, payload = _parse_body(view, header)
    return CompressedFile(header, records, payload)


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------


def _split_sections(buf: memoryview, count: int, fmt: FloatFormat, params: TunedParams, where: str):
    sizes = section_sizes(count, fmt, params, 0)
    pos = 0
    mask = buf[pos : pos + sizes["mask"]]
    pos += sizes["mask"]
    low = buf[pos : pos + sizes["low"]]
    pos += sizes["low"]
    _need(buf, pos, COUNT.size, f"overflow count of {where}")
    (anomalous,) = COUNT.unpack_from(buf, pos)
    pos += COUNT.size
    groups = padded_count(count, params.L) // params.L
    if anomalous > groups:
        raise ConsistencyError(f"{where}: {anomalous} anomalous groups but only {groups} groups")
    high = params.n - params.m
    ov_size = bitpack.runs_size(anomalous * params.L, high) if high else 0
    if anomalous and not high:
        raise ConsistencyError(f"{where}: anomalous groups with n == m")
    overflow = buf[pos : pos + ov_size]
    pos += ov_size
    residue = buf[pos : pos + sizes["residue"]]
    pos += sizes["residue"]
    if pos != len(buf):
        raise ConsistencyError(f"{where}: payload is {len(buf)} bytes, sections need {pos}")
    return mask, low, anomalous, overflow, residue


def _decode_stack(payloads: list[memoryview], count: int, fmt: FloatFormat, params: TunedParams) -> np.ndarray:
    """Decode K coded blocks of ``count`` elements; returns words shaped (K, count)."""
    b, n, m, L = params.astuple()
    padded = padded_count(count, L)
    groups = padded // L
    parts = [_split_sections(p, count, fmt, params, f"block {i}") for i, p in enumerate(payloads)]

    mask = np.unpackbits(
        np.frombuffer(b"".join(p[0] for p in parts), dtype=np.uint8).reshape(len(parts), -1),
        axis=-1,
        count=groups,
        bitorder="little",
    )
    low_packed = np.frombuffer(b"".join(p[1] for p in parts), dtype=np.uint8).reshape(len(parts), -1)
    codes = bitpack.hh_unpack_array(low_packed, padded, m)
    residue_packed = np.frombuffer(b"".join(p[4] for p in parts), dtype=np.uint8).reshape(len(parts), -1)
    residues = bitpack.fixed_unpack_array(residue_packed, count, fmt.residue_bits)

    popcounts = mask.sum(axis=1)
    starts = bitpack.overflow_positions(mask, L)
    lane = np.arange(L)
    for k, (_, _, anomalous, overflow, _) in enumerate(parts):
        if popcounts[k] != anomalous:
            raise ConsistencyError(f"block {k}: mask has {popcounts[k]} anomalous groups, count says {anomalous}")
        if not anomalous:
            continue
        high = bitpack.hh_unpack_runs(overflow, anomalous * L, n - m)
        flagged = mask[k].astype(bool)
        gather = (starts[k][flagged][:, None] + lane).ravel()
        grouped = codes[k].reshape(groups, L)
        grouped[flagged] |= (high[gather] << m).reshape(-1, L)

    exps = inverse_map_array(codes[:, :count], b, n)
    return join_fields(exps, residues, fmt)


def _decode_chunk(job) -> np.ndarray:
    cfile, rec, first, last = job
    block_size = cfile.header.block_size
    pieces = {}
    coded = []
    for i in range(first, last):
        count = min(block_size, rec.element_count - i * block_size)
        entry = rec.blocks[i]
        buf = cfile.block_payload(rec, i)
        if entry.raw:
            if entry.size != count * rec.fmt.item_size:
                raise ConsistencyError(f"raw block {i} is {entry.size} bytes, expected {count * rec.fmt.item_size}")
            pieces[i] = np.frombuffer(buf, dtype=rec.fmt.word_dtype)
        else:
            coded.append((i, count, buf))
    by_count: dict[int, list] = {}
    for i, count, buf in coded:
        by_count.setdefault(count, []).append((i, buf))
    for count, items in by_count.items():
        words = _decode_stack([buf for _, buf in items], count, rec.fmt, rec.params)
        for (i, _), row in zip(items, words):
            pieces[i] = row
    if not pieces:
        return np.empty(0, dtype=rec.fmt.word_dtype)
    return np.concatenate([pieces[i] for i in range(first, last)])


def decode_block(cfile: CompressedFile, tensor_index: int, block_index: int) -> bytes:
    """Random access: decode one block from its directory entry alone."""
    rec = cfile.records[tensor_index]
    return _decode_chunk((cfile, rec, block_index, block_index + 1)).tobytes()


def decompress_tensors(blob, workers: int = 1) -> list[DecodedTensor]:
    cfile = read_container(blob)
    jobs = []
    owners = []
    for index, rec in enumerate(cfile.records):
        for first in range(0, len(rec.blocks), CHUNK_BLOCKS):
            jobs.append((cfile, rec, first, min(first + CHUNK_BLOCKS, len(rec.blocks))))
            owners.append(index)
    results = _run(_decode_chunk, jobs, workers)
    per_tensor: list[list[np.ndarray]] = [[] for _ in cfile.records]
    for owner, words in zip(owners, results):
        per_tensor[owner].append(words)
    return [
        DecodedTensor(rec.name, rec.fmt, b"".join(w.tobytes() for w in parts))
        for rec, parts in zip(cfile.records, per_tensor)
    ]


def decompress(blob, workers: int = 1) -> bytes:
    """Decode every tensor and concatenate their bytes in table order."""
    return b"".join(t.data for t in decompress_tensors(blob, workers))


# --------------------------------------------------------------------------
# verification and ratio accounting
# --------------------------------------------------------------------------


def first_mismatch(a, b) -> int | None:
    a = np.frombuffer(memoryview(a).cast("B"), dtype=np.uint8)
    b = np.frombuffer(memoryview(b).cast("B"), dtype=np.uint8)
    common = min(a.shape[0], b.shape[0])
    diff = np.flatnonzero(a[:common] != b[:common])
    if diff.size:
        return int(diff[0])
    if a.shape[0] != b.shape[0]:
        return common
    return None


def exponent_section_bytes(cfile: CompressedFile) -> tuple[int, int]:
    """(bytes spent on exponents, elements) over all blocks.

    Counts mask, low and overflow sections (including the overflow count
    word) of coded blocks, and exp_bits per element of raw blocks.
    """
    total_bits = 0
    elements = 0
    block_size = cfile.header.block_size
    for rec in cfile.records:
        for i, entry in enumerate(rec.blocks):
            count = min(block_size, rec.element_count - i * block_size)
            elements += count
            if entry.raw:
                total_bits += count * rec.fmt.exp_bits
                continue
            residue = bitpack.fixed_size(count, rec.fmt.residue_bits)
            total_bits += 8 * (entry.size - residue)
    return total_bits, elements


def verify(original, blob, workers: int = 1) -> RatioReport:
    """Decode, compare byte-for-byte and report ratios.

    ``original`` is either one buffer (compared against the concatenation
    of all tensors) or a sequence of per-tensor buffers.
    """
    cfile = read_container(blob)
    decoded = decompress_tensors(blob, workers)
    if isinstance(original, (list, tuple)):
        originals = list(original)
        if len(originals) != len(decoded):
            raise MismatchError(0, f"{len(originals)} original tensors, container has {len(decoded)}")
        base = 0
        for orig, tensor in zip(originals, decoded):
            where = first_mismatch(orig, tensor.data)
            if where is not None:
                raise MismatchError(base + where, f"tensor {tensor.name!r}: first mismatch at byte {where}")
            base += len(tensor.data)
    else:
        originals = []
        where = first_mismatch(original, b"".join(t.data for t in decoded))
        if where is not None:
            raise MismatchError(where)
        pos = 0
        for tensor in decoded:
            originals.append(memoryview(original).cast("B")[pos : pos + len(tensor.data)])
            pos += len(tensor.data)

    original_bytes = sum(len(t.data) for t in decoded)
    exp_bits, elements = exponent_section_bytes(cfile)
    predicted_total = 0.0
    for rec, orig in zip(cfile.records, originals):
        if rec.element_count == 0:
            continue
        words = as_words(orig, rec.fmt)
        hist = tensor_histogram(words, rec.fmt, workers)
        if any(e.raw for e in rec.blocks):
            per_element = rec.fmt.total_bits
        else:
            per_element = rec.fmt.residue_bits + predicted_bits(hist, rec.params)
        predicted_total += rec.element_count * per_element
    compressed = len(blob)
    return RatioReport(
        original_bytes=original_bytes,
        compressed_bytes=compressed,
        compression_ratio=original_bytes / compressed if compressed else math.nan,
        exponent_bits_per_element=exp_bits / elements if elements else 0.0,
        formula_ratio=8 * original_bytes / predicted_total if predicted_total else math.nan,
    )


V0_METADATA_BITS = 4
V0_BLOCK_SIZE = 8192


def reference_ratio_v0(
    raw, fmt: FloatFormat | str, group_length: int = 16, block_size: int = V0_BLOCK_SIZE
) -> RatioReport:
    """Size of the frequency-table scheme, computed rather than emitted.

    Exponents are replaced by their 0-based frequency rank, every group of
    ``group_length`` codes (groups never straddle blocks) is stored at the
    bit width of its largest code plus 4 bits of width metadata, and the
    residues are stored verbatim.  The 2**E-entry rank table is charged
    one byte per entry.
    """
    fmt = get_format(fmt)
    words = as_words(raw, fmt)
    count = words.shape[0]
    original_bytes = count * fmt.item_size
    if count == 0:
        return RatioReport(0, 0, math.nan, 0.0, math.nan)
    exps, _ = split_fields(words, fmt)
    counts = count_exponents(exps, fmt.exp_bits)
    order = np.lexsort((np.arange(counts.shape[0]), -counts))
    rank = np.empty_like(order)
    rank[order] = np.arange(order.shape[0])
    codes = rank[exps]

    bit_length = np.array([int(v).bit_length() for v in range(1 << fmt.exp_bits)])
    exponent_bits = 0
    for start in range(0, count, block_size):
        block = codes[start : start + block_size]
        full = block.shape[0] // group_length
        if full:
            widths = bit_length[block[: full * group_length].reshape(full, group_length).max(axis=1)]
            exponent_bits += int(widths.sum()) * group_length + V0_METADATA_BITS * full
        rest = block[full * group_length :]
        if rest.size:
            exponent_bits += int(bit_length[rest.max()]) * rest.size + V0_METADATA_BITS
    table_bits = 8 * (1 << fmt.exp_bits)
    total_bits = exponent_bits + table_bits + count * fmt.residue_bits
    compressed = total_bits / 8
    return RatioReport(
        original_bytes=original_bytes,
        compressed_bytes=math.ceil(compressed),
        compression_ratio=original_bytes / compressed,
        exponent_bits_per_element=exponent_bits / count,
        formula_ratio=math.nan,
    )
