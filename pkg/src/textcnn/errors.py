"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError and its
subclasses -> 2, NumericError -> 3.
"""


class Error(Exception):
    """Base class for package-specific errors."""


class DimensionError(Error):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(Error):
    """A model, layer, or run configuration violates a structural constraint."""


class DataError(Error):
    """Problem with an external data file."""


class ParseError(DataError):
    """A file could not be parsed; the message carries the line number."""


class RecordError(DataError):
    """A record parsed but holds an invalid value; message carries the row."""


class FormatError(DataError):
    """A file has a recognizable but unsupported or inconsistent format."""


class CorruptError(DataError):
    """A file is truncated or internally inconsistent."""


class NumericError(Error):
    """A computation produced NaN/Inf where finite values were required."""


class HarnessError(Error):
    """The gradient-check harness detected a non-deterministic forward pass."""
