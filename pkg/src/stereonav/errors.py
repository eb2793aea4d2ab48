"""Exception types shared across the library."""


class StereonavError(Exception):
    """Base class for all library-specific errors."""


class ShapeError(StereonavError, ValueError):
    """Operand shapes do not conform; the message names the offending axis."""


class ConfigurationError(StereonavError, ValueError):
    """A configuration value is inconsistent or unsupported."""


class ValidationError(StereonavError, ValueError):
    """An input record failed schema validation before any numerics ran."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class EvaluationError(StereonavError, RuntimeError):
    """A forward evaluation produced a non-finite or unusable value."""


class DegenerateDisparityError(StereonavError, ValueError):
    """A disparity fell at or below the minimum; names the patch index."""

    def __init__(self, patch_index, value, d_min):
        self.patch_index = patch_index
        super().__init__(
            f"disparity {value!r} at patch {patch_index} is <= d_min={d_min}"
        )


class UndefinedDirectionError(StereonavError, ValueError):
    """Every ground-truth step was degenerate, so headings are undefined."""


class EmptySetError(StereonavError, ValueError):
    """A metric was asked to aggregate over an empty sample set."""


class FormatError(StereonavError, ValueError):
    """A binary container is corrupt; carries the failing byte offset."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class NoPathError(StereonavError, RuntimeError):
    """Goal unreachable from start; reports the reachable component size."""

    def __init__(self, start, goal, reachable):
        self.reachable = reachable
        super().__init__(
            f"no path from node {start} to node {goal}; "
            f"{reachable} nodes reachable from start"
        )


class GenerationError(StereonavError, RuntimeError):
    """An episode template could not be realized in the given world."""
