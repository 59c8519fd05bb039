"""Exception hierarchy shared by every codec stage.

All errors derive from :class:`EnecError` so callers (the CLI in
particular) can catch the whole family at once.  Most also subclass the
closest builtin so ordinary ``except ValueError`` code keeps working.
"""

from __future__ import annotations


class EnecError(Exception):
    """Base class for all codec errors."""


class LengthError(EnecError, ValueError):
    """Byte or element counts are not aligned to what the operation needs."""


class AlignmentError(LengthError):
    """Input size is not a whole number of elements (or groups)."""


class ConsistencyError(EnecError, ValueError):
    """Internal stream lengths disagree with the declared element count."""


class RangeError(EnecError, ValueError):
    """A value does not fit in the declared bit width."""


class ShapeError(EnecError, ValueError):
    """Array shape violates a packer or scan precondition."""


class EmptyInput(EnecError, ValueError):
    """Operation needs at least one element."""


class DegenerateInput(EnecError, ValueError):
    """Too few distinct values for the requested statistic."""


class WindowError(EnecError, ValueError):
    """An exponent lies outside the window representable by (b, n)."""


class ParamError(EnecError, ValueError):
    """A (b, n, m, L) tuple is invalid for the format or block size."""


class FormatError(EnecError, ValueError):
    """Unknown or unsupported floating-point format."""


class ContainerError(EnecError):
    """Base class for malformed ``.enec`` files."""


class MagicError(ContainerError):
    pass


class VersionError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


class TruncationError(ContainerError):
    """File ends before the named section is complete."""

    def __init__(self, section: str, needed: int, available: int):
        super().__init__(
            f"truncated {section}: need {needed} bytes, have {available}"
        )
        self.section = section


class MismatchError(EnecError):
    """Decoded output differs from the original."""

    def __init__(self, offset: int, message: str | None = None):
        super().__init__(message or f"first mismatch at byte offset {offset}")
        self.offset = offset


class IoError(EnecError, OSError):
    pass


class HeaderError(EnecError, ValueError):
    """Malformed safetensors header."""


class OffsetError(EnecError, ValueError):
    """Safetensors data offsets overlap or fall outside the data section."""


class UnsupportedDtype(EnecError, ValueError):
    pass
