"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (see cli.main), so library code should
raise the most specific class that applies rather than bare ValueError.
"""


class RlweaveError(Exception):
    """Base class for all package errors."""


class UsageError(RlweaveError):
    """Caller invoked an operation in a way its contract forbids."""


class ShapeError(UsageError):
    """Input dimensions do not match the bound network/environment."""


class ConfigError(RlweaveError):
    """Invalid or unknown configuration (bad key, out-of-range value)."""


class NumericError(RlweaveError):
    """A computation produced or received non-finite values."""


class TrainingDivergedError(RlweaveError):
    """Training loss blew up; carries the last finite parameter vector."""

    def __init__(self, message, last_params=None, run_log=None):
        super().__init__(message)
        self.last_params = last_params
        self.run_log = run_log


class BudgetExceededError(RlweaveError):
    """A target was not reached within the allowed update/step budget."""


class EnvMisconfigurationError(RlweaveError):
    """Environment settings make the requested operation infeasible."""


class TheoryCheckFailure(RlweaveError):
    """A bound or identity that must hold numerically was violated."""
