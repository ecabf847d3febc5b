"""Exception hierarchy shared across the package."""


class FluidForgeError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(FluidForgeError):
    """A scenario or solver configuration is invalid or self-contradictory."""


class FormatError(FluidForgeError):
    """A binary file does not carry the expected magic/version header."""


class CorruptionError(FluidForgeError):
    """A binary file has a valid header but a truncated or inconsistent payload."""


class IncompatibilityError(FluidForgeError):
    """Persisted weights do not match the architecture of the running session."""


class DomainError(FluidForgeError):
    """A particle position fell outside the unit simulation domain."""


class MetricUndefinedError(FluidForgeError):
    """A metric's denominator vanishes for every sample, leaving it undefined."""


class NonFiniteFieldError(FluidForgeError):
    """A controller produced NaN or infinite accelerations."""


class DegenerateSketchError(FluidForgeError):
    """The requested sketch has no usable geometry (e.g. zero-length arrow)."""
