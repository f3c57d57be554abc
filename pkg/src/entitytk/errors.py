"""Exception types shared across the toolkit.

All toolkit failures derive from ToolkitError so callers can catch one
base class; each subclass also derives from ValueError for plain-Python
ergonomics.
"""


class ToolkitError(ValueError):
    """Base class for all toolkit errors."""


class ShapeError(ToolkitError):
    """Array dimensions do not match what an operation requires."""


class FormatError(ToolkitError):
    """A serialized object (RLE, JSON file) violates its format contract."""


class DomainError(ToolkitError):
    """A numeric input lies outside its allowed domain."""


class ValidationError(ToolkitError):
    """A prediction violates the resolved-prediction contract."""


class ConstraintError(ToolkitError):
    """Overlapping masks fed to a strictly non-overlapping code path."""


class IngestionError(ToolkitError):
    """A source annotation file is internally inconsistent."""


class IntegrityError(ToolkitError):
    """Converted records violate a dataset invariant (e.g. overlap)."""


class ConfigError(ToolkitError):
    """An evaluation configuration is invalid for the requested metric."""


class EmptyMaskError(ToolkitError):
    """An operation that needs at least one foreground pixel got none."""
