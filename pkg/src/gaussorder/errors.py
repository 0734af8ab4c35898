"""Shared exception types.

Invalid arguments raise plain ``ValueError``; everything that needs a
distinct exit code or a catch site of its own gets a class here.
"""


class DomainError(ValueError):
    """Inputs outside the mathematical domain of an operation."""


class CycleError(ValueError):
    """The relation graph contains a cycle."""


class SamplingError(RuntimeError):
    """A negative sampler exhausted its retry budget."""


class ParseError(ValueError):
    """Malformed input file; carries path and 1-based line number."""

    def __init__(self, path, line_no: int | None, message: str):
        self.path = str(path)
        self.line_no = line_no
        where = self.path if line_no is None else f"{self.path}:{line_no}"
        super().__init__(f"{where}: {message}")


class DataError(ValueError):
    """Structurally valid input that cannot be used (empty file, unknown node, ...)."""


class CheckpointError(ValueError):
    """Checkpoint file failed validation (version, counts, non-finite values)."""


class TrainingError(RuntimeError):
    """Numerical failure during optimization (non-finite loss or gradient)."""


class OracleError(RuntimeError):
    """A verification oracle could not produce a stable estimate."""
