"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or out-of-range input (non-finite entries, bad grids, ...)."""


class DomainError(ValueError):
    """A scalar function was applied outside its domain (log of a nonpositive
    eigenvalue, Schatten quasi-norm of a non-PSD operator, ...)."""


class PreconditionError(ValueError):
    """A documented operation precondition was violated."""


class HoodViolationError(PreconditionError):
    """A perturbation left the chart neighbourhood of its base state.

    Carries the (negative) membership margin ``(1 - beta) - eps_norm(X)``.
    """

    def __init__(self, message, margin):
        super().__init__(f"{message} (margin={margin:.6g})")
        self.margin = margin


class BetaOverflowError(PreconditionError):
    """The Schatten tag update beta/(1-a) would reach or exceed 1."""


class ResourceLimitError(RuntimeError):
    """A computation would exceed its configured size cap."""


class ConfigError(ValueError):
    """Invalid run configuration."""
