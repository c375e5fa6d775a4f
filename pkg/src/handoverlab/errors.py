"""Exception types shared across the harness."""


class HandoverError(Exception):
    """Base class for all harness errors."""


class EmptyInputError(HandoverError):
    """An operation received an empty collection where content is required."""


class OutOfRangeError(HandoverError):
    """A scalar argument fell outside its documented range."""


class ConfigMismatchError(HandoverError):
    """A state or argument does not match the configuration it is used with."""


class GeometryError(HandoverError):
    """A mesh or geometric input violates a structural requirement."""


class DegenerateGeometryError(HandoverError):
    """Point data is too degenerate (collinear/coincident) for the operation."""


class NoOverlapError(HandoverError):
    """No point correspondences exist within the allowed distance."""


class NoValidGraspError(HandoverError):
    """No grasp candidate survived the required filters."""


class EmptyHistoryError(HandoverError):
    """An observation buffer contains no frames."""


class UsageError(HandoverError):
    """Caller requested an unknown mode, format, or option."""
