"""Exception taxonomy shared across the toolkit.

Every command-line entry point maps these onto a nonzero exit code with a
single-line diagnostic, so library code should raise the most specific one.
"""


class ToolkitError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ConfigurationError(ToolkitError):
    """Invalid configuration: bad shapes, inconsistent settings, unknown keys."""


class ContractViolation(ToolkitError):
    """An operation was called outside its documented contract."""


class DataError(ToolkitError):
    """Malformed or inconsistent input data."""
