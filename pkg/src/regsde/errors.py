"""Exception hierarchy.

Numeric failures derive from :class:`NumericError` so the CLI can map them to
a single exit code; input problems stay ``ValueError`` subclasses.
"""


class GridAlignmentError(ValueError):
    """Grid size or epsilon not aligned with the dyadic ladder."""


class NumericError(RuntimeError):
    """Base class for failures of a numerical stage."""


class FactorizationError(NumericError):
    """Covariance matrix could not be factorized."""


class QuadratureError(NumericError):
    """Quadrature did not reach tolerance within its budget."""


class InversionError(NumericError):
    """Monotone inversion failed (target outside the reachable range)."""


class ComponentExitError(NumericError):
    """A solution path left its support component."""


class SupportError(ValueError):
    """Zero set of sigma is time dependent or under-resolved."""


class YoungRegimeError(ValueError):
    """Declared Hoelder exponents do not satisfy alpha + gamma > 1."""


class MissingDerivativeError(ValueError):
    """Derivative metadata needed by an operation is absent."""


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""
