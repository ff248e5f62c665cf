"""Exception hierarchy.

Each class maps onto one CLI exit status, so callers can tell a bad flag
from a bad file from a numerical failure.
"""


class ValfuseError(Exception):
    exit_code = 1


class ArgumentError(ValfuseError, ValueError):
    """Invalid argument passed to a library operation."""

    exit_code = 2


class SchemaError(ValfuseError, ValueError):
    """A file on disk does not match its declared schema."""

    exit_code = 3


class ComputationError(ValfuseError, RuntimeError):
    exit_code = 4


class EvaluationError(ComputationError):
    """An objective function returned a non-finite value."""


class TrainingError(ComputationError):
    """Training diverged (non-finite loss)."""
