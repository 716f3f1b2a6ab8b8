"""Exception types shared across the package."""


class CoverageError(Exception):
    """Base class for all package-specific errors."""


class MalformedRing(CoverageError, ValueError):
    """Ring is not closed, degenerate, or self-intersecting."""


class NegativeHeight(CoverageError, ValueError):
    """Building height below zero."""


class EmptyCity(CoverageError, ValueError):
    """City contains neither buildings nor base stations."""


class InfeasibleDensity(CoverageError, RuntimeError):
    """Footprints cannot be placed without overlap after bounded retries."""


class EmptyRing(CoverageError, ValueError):
    """No vertices supplied."""


class NonpositiveDistance(CoverageError, ValueError):
    """Link distance must be positive."""


class NonpositiveParameter(CoverageError, ValueError):
    """Terrain polynomial produced a nonpositive model parameter."""


class DistanceBelowHeight(CoverageError, ValueError):
    """3D link distance smaller than the transmitter height."""


class OutOfRange(CoverageError, ValueError):
    """Argument outside the domain the model is defined on."""


class QuadratureFailure(CoverageError, RuntimeError):
    """Numerical integration did not reach the requested accuracy."""


class FitDiverged(CoverageError, RuntimeError):
    """Nonlinear least-squares solver failed to converge."""


class ArgmaxNotFound(CoverageError, RuntimeError):
    """Objective too flat to locate a maximizer."""


class Unsatisfiable(CoverageError, RuntimeError):
    """No radius below the search cap satisfies all truncation criteria."""


class EmptyDatabase(CoverageError, ValueError):
    """Coefficient database holds no entries."""


class NoBasestations(CoverageError, ValueError):
    """Operation requires at least one base station."""


class NoAssociableBs(CoverageError, RuntimeError):
    """Every candidate base station is blocked; no association possible."""


class InsufficientData(CoverageError, ValueError):
    """Training data does not cover every parameter class."""


class GridMismatch(CoverageError, ValueError):
    """Manifold grids differ in origin, spacing or shape."""


class IoFailure(CoverageError, OSError):
    """File could not be written or read."""
