class RankDeficiencyError(ValueError):
    """A factor that must have full rank does not."""


class DivergenceError(RuntimeError):
    """An iterative method blew up; ``trace`` holds the history up to the abort."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class RankClippedWarning(UserWarning):
    """The requested rank exceeded the available rank and was reduced."""
