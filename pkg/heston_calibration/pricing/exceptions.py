class HestonError(Exception):
    """Base class for every error raised by the pricing and calibration code."""


class GridError(HestonError, ValueError):
    """Invalid mesh sizes, truncation bounds, or trajectories on different grids."""


class ParameterError(HestonError, ValueError):
    """Model parameters outside the admissible box or with invalid signs."""


class DomainError(HestonError, ValueError):
    """A query point lies outside the truncated computational domain."""


class SolverError(HestonError, RuntimeError):
    """A stage solve failed or the marching produced non-finite values."""


class OracleError(HestonError, RuntimeError):
    """The characteristic-function quadrature did not converge."""
