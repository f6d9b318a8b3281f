"""Exception types shared across the package."""


class AdaSplitError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(AdaSplitError):
    """Malformed input data (bad CSV cell, invariant violation, dimension mismatch)."""


class ConfigError(AdaSplitError):
    """Invalid configuration value or unknown configuration key."""
