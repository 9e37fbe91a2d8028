"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit 1, data
problems exit 2 and numerical failures exit 3.
"""


class MaglocError(Exception):
    """Base class for every error raised deliberately by magloc."""


class ShapeError(MaglocError, ValueError):
    """Array shapes do not line up for the requested operation."""


class ContractError(MaglocError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(MaglocError, ValueError):
    """Invalid model, run or scenario configuration."""


class DataError(MaglocError):
    """Input data cannot be used (missing columns, empty splits, ...)."""


class IngestError(DataError):
    """A recording could not be ingested."""


class CheckpointError(MaglocError):
    """A checkpoint file is corrupt or does not match what was expected."""


class NumericalError(MaglocError):
    """Training produced a non-finite value."""
