"""Read raw weight dumps and safetensors archives as byte ranges.

Nothing is converted: a :class:`TensorSource` is a name, a format and a
(offset, length) window into the file.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AlignmentError, HeaderError, IoError, OffsetError, UnsupportedDtype
from .fpsplit import BF16, FP16, FP32, FloatFormat, get_format

logger = logging.getLogger(__name__)

SAFETENSORS_DTYPES = {"BF16": BF16, "F16": FP16, "F32": FP32}
# element sizes of dtypes we skip, so their offsets can still be validated
_OTHER_SIZES = {
    "BOOL": 1, "U8": 1, "I8": 1, "F8_E4M3": 1, "F8_E5M2": 1,
    "I16": 2, "U16": 2, "I32": 4, "U32": 4, "I64": 8, "U64": 8, "F64": 8,
}
_HEADER_LEN = struct.Struct("<Q")
MAX_HEADER_BYTES = 100 * 1024 * 1024


@dataclass(frozen=True)
class TensorSource:
    name: str
    fmt: FloatFormat
    offset: int
    length: int
    shape: tuple[int, ...] = ()

    @property
    def element_count(self) -> int:
        return self.length // self.fmt.item_size


@dataclass
class SafetensorsIndex:
    tensors: list[TensorSource]
    skipped: list[tuple[str, str]] = field(default_factory=list)  # (name, dtype)
    metadata: dict = field(default_factory=dict)


def _file_size(path) -> int:
    try:
        return os.stat(path).st_size
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from exc


def load_raw(path, dtype: str | FloatFormat) -> TensorSource:
    """Treat the whole file as one unnamed tensor."""
    fmt = get_format(dtype)
    size = _file_size(path)
    if size % fmt.item_size:
        raise AlignmentError(f"{path}: {size} bytes is not a whole number of {fmt.name} elements")
    return TensorSource("", fmt, 0, size, (size // fmt.item_size,))


def load_safetensors(path, strict: bool = False) -> SafetensorsIndex:
    size = _file_size(path)
    try:
        with open(path, "rb") as fh:
            prefix = fh.read(_HEADER_LEN.size)
            if len(prefix) < _HEADER_LEN.size:
                raise HeaderError(f"{path}: file too short for a safetensors header")
            (header_len,) = _HEADER_LEN.unpack(prefix)
            if header_len > MAX_HEADER_BYTES or _HEADER_LEN.size + header_len > size:
                raise HeaderError(f"{path}: header length {header_len} exceeds file size {size}")
            header_bytes = fh.read(header_len)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{path}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise HeaderError(f"{path}: header must be a JSON object")

    data_start = _HEADER_LEN.size + header_len
    data_size = size - data_start
    index = SafetensorsIndex([], [], header.pop("__metadata__", None) or {})
    spans = []
    for name, info in header.items():
        try:
            dtype = info["dtype"]
            shape = tuple(int(d) for d in info["shape"])
            start, stop = (int(v) for v in info["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderError(f"{path}: bad entry for tensor {name!r}") from exc
        if not 0 <= start <= stop <= data_size:
            raise OffsetError(f"{name!r}: data_offsets [{start}, {stop}) outside data section of {data_size} bytes")
        item = SAFETENSORS_DTYPES[dtype].item_size if dtype in SAFETENSORS_DTYPES else _OTHER_SIZES.get(dtype)
        if item is not None and stop - start != math.prod(shape) * item:
            raise OffsetError(f"{name!r}: {stop - start} bytes does not match shape {list(shape)} of {dtype}")
        spans.append((start, stop, name))
        if dtype in SAFETENSORS_DTYPES:
            index.tensors.append(TensorSource(name, SAFETENSORS_DTYPES[dtype], data_start + start, stop - start, shape))
        elif strict:
            raise UnsupportedDtype(f"{name!r} has unsupported dtype {dtype}")
        else:
            logger.warning("skipping %s: unsupported dtype %s", name, dtype)
            index.skipped.append((name, dtype))

    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise OffsetError(f"tensors {n0!r} and {n1!r} overlap")
    index.tensors.sort(key=lambda t: t.offset)
    return index


def is_safetensors(path) -> bool:
    return Path(path).suffix == ".safetensors"


def read_tensor(path, source: TensorSource) -> bytes:
    try:
        with open(path, "rb") as fh:
            fh.seek(source.offset)
            data = fh.read(source.length)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from exc
    if len(data) != source.length:
        raise IoError(f"{path}: expected {source.length} bytes at offset {source.offset}, got {len(data)}")
    return data


def write_safetensors(path, tensors: list[tuple[str, str, tuple[int, ...], bytes]], metadata: dict | None = None) -> None:
    """Write ``(name, dtype, shape, data)`` tuples as a safetensors file."""
    header: dict = {}
    if metadata:
        header["__metadata__"] = metadata
    offset = 0
    for name, dtype, shape, data in tensors:
        header[name] = {"dtype": dtype, "shape": list(shape), "data_offsets": [offset, offset + len(data)]}
        offset += len(data)
    encoded = json.dumps(header, separators=(",", ":")).encode("utf-8")
    encoded += b" " * (-len(encoded) % 8)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER_LEN.pack(len(encoded)))
            fh.write(encoded)
            for _, _, _, data in tensors:
                fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc


def write_output(path, data) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc
