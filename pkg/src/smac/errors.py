"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SmacError(Exception):
    exit_code = 1
    kind = "error"


class DimensionError(SmacError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 4
    kind = "dimension"


class ConfigError(SmacError):
    exit_code = 2
    kind = "config"


class DataError(SmacError):
    exit_code = 3
    kind = "data"


class ParseError(DataError):
    """Malformed image file. ``offset`` is the byte position of the problem."""

    kind = "parse"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(SmacError):
    exit_code = 4
    kind = "numeric"
