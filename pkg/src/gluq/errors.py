"""Exception types shared across the package."""


class GluqError(Exception):
    """Base class for all package errors."""


class ShapeError(GluqError, ValueError):
    """Incompatible tensor shapes for a primitive or model component."""

    def __init__(self, primitive, message):
        self.primitive = primitive
        super().__init__(f"{primitive}: {message}")


class NumericFailure(GluqError, ArithmeticError):
    """A computation produced NaN/Inf or an iterative solver failed."""

    def __init__(self, message, log=None):
        self.log = log if log is not None else []
        super().__init__(message)


class ConfigError(GluqError, ValueError):
    """Invalid configuration value."""


class DegenerateMixture(NumericFailure):
    """Product-of-Gaussians with zero total precision."""


class IncompatibleSource(GluqError, ValueError):
    """Source term violates the pure-Neumann compatibility condition."""


class UndefinedScore(GluqError, ValueError):
    """Metric denominator is zero (e.g. constant truths for R^2)."""


class CorruptFile(GluqError, IOError):
    """Tensor file failed structural or checksum validation."""


class DegenerateSamples(GluqError, ValueError):
    """All samples identical; kernel density bandwidth would be zero."""
