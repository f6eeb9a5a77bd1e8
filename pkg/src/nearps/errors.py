"""Exception types shared across the package."""


class NearpsError(Exception):
    """Base class for numerical and geometric failures."""


class DegenerateGeometryError(NearpsError):
    """Raised when a pixel's geometry makes the requested quantity undefined."""


class CalibrationError(NearpsError):
    """Raised when a light-source calibration problem is degenerate."""


class SolverError(NearpsError):
    """Raised when an iterative solver breaks down."""
