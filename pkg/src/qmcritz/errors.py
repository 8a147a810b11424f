"""Exception types shared across the package.

The CLI maps these onto exit codes: usage and configuration problems exit
with 1, numeric failures with 2.
"""


class QmcRitzError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QmcRitzError):
    """Inconsistent sizes, unknown names, or out-of-range settings."""


class UsageError(QmcRitzError):
    """An operation was called on inputs that violate its preconditions."""


class NumericFailure(QmcRitzError):
    """A NaN or Inf showed up in a loss, gradient, or parameter update.

    ``iteration`` and ``point_index`` are filled in when known so that a
    failed run can be located precisely.
    """

    def __init__(self, message, iteration=None, point_index=None):
        self.iteration = iteration
        self.point_index = point_index
        parts = [message]
        if iteration is not None:
            parts.append(f"iteration={iteration}")
        if point_index is not None:
            parts.append(f"point={point_index}")
        super().__init__(" ".join(parts))
