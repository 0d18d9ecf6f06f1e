"""Exception types shared across the package."""


class L2LError(Exception):
    """Base class for all package errors."""


class ConfigurationError(L2LError, ValueError):
    """Shapes, sizes or config values do not fit together."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class NumericalDivergence(L2LError, FloatingPointError):
    """A membrane potential, loss or gradient became non-finite."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class ContractViolation(L2LError, RuntimeError):
    """A precondition between cooperating components was broken."""


class FormatError(L2LError, IOError):
    """A binary container or checkpoint could not be read."""
