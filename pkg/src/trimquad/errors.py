"""Exception hierarchy shared by all trimquad modules."""


class TrimQuadError(Exception):
    """Base class for all errors raised by this package."""


class OutOfDomainError(TrimQuadError):
    """A parametric coordinate lies outside the knot-vector domain."""


class InvalidKnotVectorError(TrimQuadError):
    """A knot vector violates the open-format or multiplicity constraints."""


class InvalidRefinementError(TrimQuadError):
    """Knot insertion would exceed the admissible multiplicity."""


class UnsupportedContinuityError(TrimQuadError):
    """The requested operation needs higher inter-element continuity."""


class NonConvergenceError(TrimQuadError):
    """The quadrature-rule solver did not converge.

    Carries the infinity norm of the last exactness residual so callers can
    decide whether to fall back to per-span Gauss integration.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MalformedTrimError(TrimQuadError):
    """A trimming loop is not closed / not closable along the boundary."""


class UnsupportedTrimTopology(TrimQuadError):
    """A trimmed element has a curve topology the cell partition cannot
    represent; refine the mesh until each element is cut by a single chain."""


class InvertedCellError(TrimQuadError):
    """The blending map of an integration cell has a non-positive Jacobian."""


class ElementGeometryError(TrimQuadError):
    """The geometry map is degenerate (non-positive Jacobian determinant)."""


class SolverError(TrimQuadError):
    """The linear solver failed (singular or indefinite system)."""


class ProblemFileError(TrimQuadError):
    """A benchmark problem file failed validation."""
