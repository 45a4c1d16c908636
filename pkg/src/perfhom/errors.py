"""Exception types raised by the perfhom toolkit."""


class PerfhomError(Exception):
    """Base class for all toolkit errors."""


class GeometryViolation(PerfhomError):
    """A geometric precondition fails (degenerate hole, bad rectangle, ...)."""


class HoleOutsideCell(GeometryViolation):
    """A hole lies (grossly) outside the unit cell."""


class SeparationViolation(GeometryViolation):
    """Holes come closer than c0 to each other or to the cell boundary."""


class MeshGenerationFailure(PerfhomError):
    """Triangulation could not produce a valid conforming mesh."""


class TilingMismatch(MeshGenerationFailure):
    """Cell mesh traces do not line up when tiling the domain."""


class MeshLineageMismatch(PerfhomError):
    """A nodal field is evaluated on a mesh it was not built for."""


class FieldKindMismatch(PerfhomError):
    """Scalar data passed where a vector field is required, or vice versa."""


class CGNoConvergence(PerfhomError):
    """Conjugate gradients stalled before reaching the requested residual."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EigenIterationDivergence(PerfhomError):
    """Inverse power iteration failed to converge to the requested residual."""


class MeanNotZero(PerfhomError):
    """A right-hand side that must integrate to zero does not."""


class SlopeUnreliable(PerfhomError):
    """A log-log rate fit is meaningless (degenerate data or bad residual)."""


class ConfigParseError(PerfhomError):
    """The experiment configuration file cannot be read or parsed."""


class ConfigValidationError(PerfhomError):
    """A parsed configuration value is out of range or inconsistent."""

    def __init__(self, field, reason):
        super().__init__(f"config field '{field}': {reason}")
        self.field = field
        self.reason = reason


class IoFailure(PerfhomError):
    """Report or plot-data files could not be written."""
