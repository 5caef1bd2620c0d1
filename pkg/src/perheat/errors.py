"""Exception hierarchy."""


class PerheatError(Exception):
    """Base class for all errors raised by perheat."""


class LatticeSumError(PerheatError):
    """Lattice truncation could not meet the tail tolerance within max_shell."""


class SingularPointError(PerheatError, ValueError):
    """Kernel evaluated at a point where it is undefined."""


class MapValidationError(PerheatError):
    """A boundary map failed validation."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class SingularBlockError(PerheatError):
    """The diagonal block of a causal system is numerically singular."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NearBoundaryError(PerheatError):
    """An evaluation target is too close to the interface to be resolved."""


class ExtrapolationError(PerheatError):
    """One-sided boundary limits could not be extrapolated reliably."""


class ConfigError(PerheatError):
    """Invalid experiment configuration."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
