"""Exception hierarchy shared across the package.

Each class maps to one failure family the CLI translates into an exit code.
"""


class ArdnetError(Exception):
    """Base class for all package errors."""

    exit_class = "internal"


class InvalidInputError(ArdnetError, ValueError):
    """Arguments violate a documented precondition."""

    exit_class = "config"


class ConfigError(ArdnetError):
    """Malformed or inconsistent configuration."""

    exit_class = "config"


class UnsupportedOperationError(ArdnetError):
    """Operation not available for the given surface or mode."""

    exit_class = "config"


class ParameterizationError(ArdnetError):
    """Model parameters outside the admissible region (e.g. exponential link >= 1)."""

    exit_class = "estimation"


class CalibrationError(ArdnetError):
    """Offset calibration target unreachable within the bracket."""

    exit_class = "estimation"


class EstimationError(ArdnetError):
    """Degenerate data or failed estimation setup."""

    exit_class = "estimation"


class NumericalDomainError(ArdnetError):
    """A quantity left its mathematical domain (e.g. nonpositive Poisson rate)."""

    exit_class = "estimation"


class AlignmentError(ArdnetError):
    """Point-set alignment impossible (too few points)."""

    exit_class = "estimation"
