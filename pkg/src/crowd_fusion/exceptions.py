"""
Error types raised by the label fusion engine.
"""


class CrowdFusionError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CrowdFusionError, ValueError):
    """An input violates a precondition or a type invariant."""


class ConfigError(ValidationError):
    """A configuration file is malformed or holds invalid values."""


class NumericError(CrowdFusionError, ArithmeticError):
    """A computation reached a degenerate numeric state."""
