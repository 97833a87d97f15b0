"""Exception hierarchy shared across the package."""


class RiemresError(Exception):
    """Base class for all package errors."""


class PreconditionError(RiemresError, ValueError):
    """An operation was called with input violating its contract."""


class DomainError(RiemresError, ValueError):
    """A point or argument lies outside the valid manifold domain."""


class NumericError(RiemresError, ArithmeticError):
    """An iterative routine failed to converge or drifted beyond tolerance."""


class SingularMatrixError(NumericError):
    """A matrix eigenvalue fell at or below the positive-definite floor."""


class ConfigurationError(RiemresError, ValueError):
    """Model or experiment configuration is internally inconsistent."""


class SchemaError(RiemresError, ValueError):
    """A data file failed structural validation."""
