"""Exception types raised by the solvers."""


class StochLQError(Exception):
    pass


class InvalidGridError(StochLQError, ValueError):
    pass


class ShapeError(StochLQError, ValueError):
    pass


class NumericError(StochLQError, ArithmeticError):
    """Non-finite values appeared; ``level`` names the tree level where it happened."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class DomainError(StochLQError, ValueError):
    pass


class CapacityError(StochLQError):
    pass


class IndefiniteError(StochLQError):
    pass


class NoEquilibriumError(StochLQError):
    def __init__(self, message, best_iterate=None):
        super().__init__(message)
        self.best_iterate = best_iterate


class ConfigError(StochLQError, ValueError):
    """Invalid configuration; ``field`` is the dotted path of the offending entry."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
