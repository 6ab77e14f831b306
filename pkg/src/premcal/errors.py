"""Exception types shared across the package."""


class PremcalError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(PremcalError, ValueError):
    """A required column or field is missing or has the wrong kind."""


class DataValidationError(PremcalError, ValueError):
    """Row- or vector-level data violates an invariant (bad exposure, NaN, ...)."""


class ConfigError(PremcalError, ValueError):
    """An algorithm parameter is outside its admissible range."""


class ConvergenceError(PremcalError, RuntimeError):
    """An iterative procedure did not reach its stopping criterion."""
