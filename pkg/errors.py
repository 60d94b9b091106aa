"""
Exception types shared by the solver, the verification tools and the
empirical pipeline.
"""


class GasGameError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(GasGameError, ValueError):
    """An argument is outside the domain of the operation."""


class OutOfSupportError(InvalidArgumentError):
    """A gas fee lies outside the equilibrium support [g_L, g_H]."""


class ConfigError(InvalidArgumentError):
    """A configuration value is missing or invalid."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnsupportedOpportunityError(GasGameError):
    """The arbitrage opportunity O is outside (1, 3]."""


class NoTradeError(GasGameError):
    """The highest profitable gas fee does not exceed the base gas fee."""


class NonConvergenceError(GasGameError):
    """The integral-equation march stopped before bracketing z-hat."""

    def __init__(self, message, partial_path=None):
        super().__init__(message)
        self.partial_path = partial_path


class BracketMissingError(GasGameError):
    """The stored path never reaches cumulative v = 1."""


class SingularDesignError(GasGameError):
    """The regression design matrix is rank deficient."""

    def __init__(self, columns):
        super().__init__(f"singular design; offending columns: {', '.join(columns)}")
        self.columns = list(columns)


class BlockGapError(GasGameError):
    """Block numbers are not consecutive."""

    def __init__(self, missing_ranges):
        ranges = ', '.join(f"{lo}-{hi}" if lo != hi else str(lo) for lo, hi in missing_ranges)
        super().__init__(f"missing block numbers: {ranges}")
        self.missing_ranges = list(missing_ranges)
