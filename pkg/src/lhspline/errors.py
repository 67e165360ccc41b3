"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data cannot be used (unreadable, malformed, or too sparse)."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (divergence, singular system, ...)."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
