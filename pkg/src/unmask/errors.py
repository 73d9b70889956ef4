"""Exception taxonomy shared across the package."""


class UnmaskError(Exception):
    """Base class for all package errors."""


class InvalidInputError(UnmaskError):
    """Malformed or out-of-contract input data."""


class ConfigurationError(UnmaskError):
    """Inconsistent or incomplete run configuration."""


class ConflictError(UnmaskError):
    """Write rejected because it duplicates an existing record."""


class UndefinedMetricError(UnmaskError):
    """Metric is mathematically undefined for the given inputs."""
