"""Exception types shared across the package."""


class RichUNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RichUNetError, ValueError):
    """Operands have incompatible or invalid shapes."""


class ConfigError(RichUNetError, ValueError):
    """A configuration value violates an invariant."""


class UsageError(RichUNetError, ValueError):
    """An API or CLI entry point was called incorrectly."""


class DataError(RichUNetError, ValueError):
    """A data file or dataset is malformed."""


class PgmError(DataError):
    """A PGM file failed to parse. `offset` is the failing byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointError(DataError):
    """A checkpoint file failed to load. `offset` is the failing byte position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class MetricUndefinedError(RichUNetError, ValueError):
    """A metric has no defined value for the given inputs (e.g. HD95 on an empty mask)."""


class NumericalError(RichUNetError, ArithmeticError):
    """Training or evaluation produced a non-finite value."""
