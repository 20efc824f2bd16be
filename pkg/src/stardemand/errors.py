"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems -> 1,
data problems -> 2, numerical failures -> 3.
"""


class ConfigError(Exception):
    """Bad configuration or usage."""


class DataError(Exception):
    """Malformed or inconsistent input data."""


class NumericalError(Exception):
    """A numerical routine failed to produce a usable result."""


class ConvergenceError(NumericalError):
    """Iterative solver hit its sweep limit.

    Carries the last iterate and the per-sweep objective trace so callers
    can inspect how far the solve got.
    """

    def __init__(self, message, last_iterate=None, objective_trace=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.objective_trace = objective_trace
