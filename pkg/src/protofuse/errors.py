"""Exception hierarchy shared by every protofuse module."""


class ProtoFuseError(Exception):
    """Base class for all protofuse failures."""


class ConfigError(ProtoFuseError, ValueError):
    """Invalid configuration or argument combination."""


class LoadError(ProtoFuseError, OSError):
    """A referenced file is missing or unreadable."""


class SchemaError(ProtoFuseError, ValueError):
    """Input data violates a structural invariant (shapes, groups, headers)."""


class PreconditionError(ProtoFuseError, ValueError):
    """An operation was called on inputs outside its domain."""


class ArityError(PreconditionError):
    """Wrong number of names, weights or rows."""


class RangeError(PreconditionError):
    """A scalar argument is outside its permitted interval."""


class NormalizationError(PreconditionError):
    """A zero-norm row was passed where a direction is required."""


class InitializationError(ProtoFuseError):
    """An embedding provider could not produce a prompt vector."""


class UndefinedMetricError(ProtoFuseError, ValueError):
    """A metric has no defined value for the given data."""


class DivergenceError(ProtoFuseError, FloatingPointError):
    """A training loss became non-finite."""
