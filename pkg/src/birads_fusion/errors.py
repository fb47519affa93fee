"""Exception types shared across the package."""


class FusionError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FusionError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(FusionError):
    """A configuration value is out of range or internally inconsistent."""


class ValidationError(FusionError):
    """Input data violates a documented contract."""


class UsageError(FusionError):
    """An API or CLI entry point was called incorrectly."""


class UndefinedMetricError(FusionError):
    """A metric has no defined value for the given inputs (e.g. one class)."""


class CheckpointError(FusionError):
    """A checkpoint file is malformed or has an unsupported format version."""
