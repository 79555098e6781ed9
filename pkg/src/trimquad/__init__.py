"""Patch-wise quadrature for trimmed NURBS surfaces.

Subpackages
-----------
splines
    Knot vectors, spline spaces, basis evaluation, NURBS curves and patches.
quadrature
    Gauss-Legendre and patch-wise 1D rules, tensor rules, count predictors.
trimming
    Trimming loops, point/element/function classification, cell partition
    and the blending map for trimmed elements.
fem
    Plane and Kirchhoff-Love plate assembly with mixed integration.
bench
    Benchmark problem library, problem-file I/O and the study runner.
oracle
    Independent brute-force references used by the test suite.
"""

from . import bench, fem, oracle, quadrature, splines, trimming
from .errors import (
    ElementGeometryError,
    InvalidKnotVectorError,
    InvalidRefinementError,
    InvertedCellError,
    MalformedTrimError,
    NonConvergenceError,
    OutOfDomainError,
    ProblemFileError,
    SolverError,
    TrimQuadError,
    UnsupportedContinuityError,
    UnsupportedTrimTopology,
)

__all__ = [
    "splines",
    "quadrature",
    "trimming",
    "fem",
    "bench",
    "oracle",
    "TrimQuadError",
    "OutOfDomainError",
    "InvalidKnotVectorError",
    "InvalidRefinementError",
    "UnsupportedContinuityError",
    "NonConvergenceError",
    "MalformedTrimError",
    "UnsupportedTrimTopology",
    "InvertedCellError",
    "ElementGeometryError",
    "SolverError",
    "ProblemFileError",
]

__version__ = "0.1.0"
