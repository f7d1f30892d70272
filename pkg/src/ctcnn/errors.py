"""Exception taxonomy shared by every module in the package."""


class CtcnnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CtcnnError):
    """Shapes or ranks are incompatible for the requested operation."""


class StateError(CtcnnError):
    """A stateful call arrived out of order (e.g. backward before forward)."""


class ConfigError(CtcnnError):
    """A configuration value is out of its legal range."""


class NumericError(CtcnnError):
    """A non-finite value (NaN or Inf) appeared where finite math is required."""


class FormatError(CtcnnError):
    """A binary file does not conform to its declared layout.

    `offset` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DecodeError(CtcnnError):
    """An image file could not be decoded."""


class EmptyDatasetError(CtcnnError):
    """A dataset root has no usable class directories."""
