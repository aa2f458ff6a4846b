"""Exception types shared across the package.

Everything raised on purpose derives from ArcFlowError so callers can catch
one base class at the CLI boundary.
"""


class ArcFlowError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(ArcFlowError):
    """A parameter bundle violates its structural contract (shapes, simplex,
    positivity, anchor pinning)."""


class InvalidIntervalError(ArcFlowError):
    """A time interval is outside [0, 1] or ordered against the flow
    direction (time decreases from 1 toward 0)."""


class InvalidProblemError(ArcFlowError):
    """An interpolation or teacher problem statement is malformed
    (duplicate knots, non-simplex weights, too few modes)."""


class NumericError(ArcFlowError):
    """A computation produced non-finite values."""


class ConvergenceError(ArcFlowError):
    """An iterative reference computation failed to reach its tolerance."""


class StateError(ArcFlowError):
    """An operation was called out of order (e.g. backward before forward)."""


class CheckpointFormatError(ArcFlowError):
    """A checkpoint file is truncated, has a bad magic string, or its header
    is inconsistent with the payload."""


class ConfigError(ArcFlowError):
    """A run-config file failed to parse; message carries file and line."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc = f"{loc}{line}: "
        elif loc:
            loc = f"{loc} "
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line
