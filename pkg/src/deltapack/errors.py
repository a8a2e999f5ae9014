"""Exception hierarchy shared by all deltapack modules."""


class DeltaPackError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(DeltaPackError):
    """Operands have incompatible dimensions."""


class StructuralError(DeltaPackError):
    """Checkpoints or artifacts disagree on layer names, shapes, or layout."""


class NumericError(DeltaPackError):
    """Non-finite values where finite floats are required."""


class DegenerateInputError(DeltaPackError):
    """Input carries no usable signal (e.g. an empty sparse matrix)."""


class ParameterError(DeltaPackError):
    """Invalid parameter value or combination."""


class CorruptionError(DeltaPackError):
    """A serialized artifact violates its format invariants."""
