"""Exception types shared across the solver modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 1.
"""


class WgflowError(Exception):
    """Base class for all package errors."""


class CoincidentPoints(WgflowError):
    """Two particles share the same position (zero pairwise distance)."""


class QuadratureNotConverged(WgflowError):
    """Adaptive cell quadrature hit its refinement cap before reaching tolerance."""


class NoConvergence(WgflowError):
    """Damped Newton exhausted its iteration or damping budget."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InfeasibleDomain(WgflowError):
    """Domain too small for the congestion constraint (|Omega| < 1)."""


class EmptyGrid(WgflowError):
    """Grid initialization produced no particles."""


class LeftDomain(WgflowError):
    """A particle left the domain and the boundary policy is 'error'."""


class UnreachableRegion(WgflowError):
    """Fast marching could not reach part of the masked-inside grid."""


class OutsideDomain(WgflowError):
    """Evaluation requested at a point outside the domain."""


class SchemaError(WgflowError):
    """Run configuration failed validation."""

    def __init__(self, message, key_path=""):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


class SingularDenominator(WgflowError):
    """Free-boundary ODE denominator became non-positive."""
