"""errors"""


class CamotError(Exception):
    """Base class of every error raised by the tracking engine."""

    exit_code = 2


class InvalidInputError(CamotError):
    """
    Malformed or inconsistent input data.

    Args:
        message (str): What is wrong.
        path (str, optional): File the offending data came from.
        line (int, optional): 1-based line number inside `path`.
    """

    exit_code = 1

    def __init__(self, message, path=None, line=None):
        self.message = message
        self.path = None if path is None else str(path)
        self.line = line
        super().__init__(str(self))

    def __str__(self):
        if self.path is None:
            return self.message
        if self.line is None:
            return f"{self.path}: {self.message}"
        return f"{self.path}:{self.line}: {self.message}"


class DimensionMismatchError(InvalidInputError):
    """Two rasters that must share a shape do not."""


class NoPlaneError(CamotError):
    """RANSAC could not produce a ground plane."""


class ObservationRejected(CamotError):
    """A proposal cannot be turned into an observation."""

    def __init__(self, reason):
        self.reason = reason
        super().__init__(reason)


class SolverLimitError(CamotError):
    """The exhaustive solver was given more hypotheses than it accepts."""


class InvariantViolation(CamotError):
    """An internal invariant is broken; this indicates a bug."""
