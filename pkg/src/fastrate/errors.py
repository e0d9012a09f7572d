"""Exception hierarchy shared by all modules."""


class FastRateError(Exception):
    """Base class for every error raised by this package."""


class StructureError(FastRateError, ValueError):
    """Array shapes or indices that do not fit the owning model."""


class DomainError(FastRateError, ValueError):
    """An input lies outside the domain where a function is defined."""


class DataError(FastRateError, ValueError):
    """Non-finite or otherwise unusable data."""


class SingularSystemError(FastRateError, ArithmeticError):
    """A linear system that cannot be solved even after jitter."""


class ContractViolation(FastRateError, ValueError):
    """A caller broke a documented precondition linking two arguments."""


class PreconditionError(FastRateError, ValueError):
    """A mathematical precondition of a bound or estimator does not hold."""


class EstimationError(FastRateError, RuntimeError):
    """A randomized estimator produced no usable draws."""


class ConfigError(FastRateError, ValueError):
    """Invalid experiment configuration."""
