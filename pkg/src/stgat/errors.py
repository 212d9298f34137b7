"""Exception types; each maps to a CLI exit code."""


class StgatError(Exception):
    exit_code = 5
    kind = "internal"


class DataError(StgatError, ValueError):
    exit_code = 3
    kind = "data"


class ConvergenceError(StgatError, RuntimeError):
    exit_code = 4
    kind = "convergence"

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InvariantError(StgatError, AssertionError):
    exit_code = 5
    kind = "invariant"


class UsageError(StgatError):
    exit_code = 2
    kind = "usage"
