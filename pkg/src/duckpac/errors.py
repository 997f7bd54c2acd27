"""Exception hierarchy.

Every error raised by the library derives from :class:`DuckPacError`; the CLI
maps each subclass to a fixed exit code.
"""


class DuckPacError(Exception):
    exit_code = 1


class ValidationError(DuckPacError):
    """Input data violates a model invariant."""

    exit_code = 2


class NetworkParseError(ValidationError):
    """Network or profile file could not be parsed."""


class InfeasibleError(DuckPacError):
    """Optimization problem has no feasible point.

    ``rows`` holds the indices of a violated row set when one is known.
    """

    exit_code = 3

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class IterationLimitError(DuckPacError):
    exit_code = 3

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class DivergenceError(DuckPacError):
    exit_code = 4


class StaleMessageError(DuckPacError):
    """A message tagged with the wrong round was delivered."""

    exit_code = 4


class DataIOError(DuckPacError):
    exit_code = 5
