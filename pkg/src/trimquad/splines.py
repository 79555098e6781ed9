"""B-spline and NURBS machinery: knot vectors, spaces, curves, surface patches.

Everything here is a pure function of immutable value objects; instances are
safe to share between threads.  Basis evaluation follows the classical
recursive algorithms (Piegl & Tiller style) with a right-closed convention
for the last non-zero knot span.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidKnotVectorError,
    InvalidRefinementError,
    OutOfDomainError,
    UnsupportedContinuityError,
)

# Two knots closer than this fraction of the domain length are one knot.
# Text-format problem files carry rounded knot values, so multiplicity
# counting cannot rely on exact float equality.
KNOT_REL_TOL = 1e-12


def _as_float_array(values, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise InvalidKnotVectorError(f"{name} must be a one-dimensional sequence")
    return arr


@dataclass(frozen=True)
class KnotVector:
    """Open knot vector with degree ``p``.

    Invariants checked at construction: non-decreasing knots, first and last
    knot repeated exactly ``p+1`` times, interior multiplicities at most
    ``p+1``.
    """

    knots: np.ndarray
    p: int

    def __post_init__(self):
        knots = _as_float_array(self.knots, "knots")
        object.__setattr__(self, "knots", knots)
        knots.setflags(write=False)
        if self.p < 0:
            raise InvalidKnotVectorError("degree must be non-negative")
        if knots.size < 2 * (self.p + 1):
            raise InvalidKnotVectorError(
                f"need at least {2 * (self.p + 1)} knots for degree {self.p}"
            )
        if np.any(np.diff(knots) < 0):
            raise InvalidKnotVectorError("knots must be non-decreasing")
        tol = self.tol
        if abs(knots[self.p] - knots[0]) > tol or abs(knots[-1] - knots[-self.p - 1]) > tol:
            raise InvalidKnotVectorError(
                "knot vector is not open: end knots must repeat degree+1 times"
            )
        if knots.size > self.p + 1 and abs(knots[self.p + 1] - knots[0]) <= tol:
            raise InvalidKnotVectorError("first knot repeated more than degree+1 times")
        if knots.size > self.p + 1 and abs(knots[-self.p - 2] - knots[-1]) <= tol:
            raise InvalidKnotVectorError("last knot repeated more than degree+1 times")
        _, mults = self.breakpoints_and_multiplicities()
        if np.any(mults[1:-1] > self.p + 1):
            raise InvalidKnotVectorError("interior knot multiplicity exceeds degree+1")

    @property
    def m(self) -> int:
        return self.knots.size

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.knots[self.p]), float(self.knots[-self.p - 1])

    @property
    def length(self) -> float:
        a, b = self.domain
        return b - a

    @property
    def tol(self) -> float:
        span = float(self.knots[-1] - self.knots[0])
        return KNOT_REL_TOL * (span if span > 0 else 1.0)

    def breakpoints_and_multiplicities(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct knot values and their multiplicities, tolerance-merged."""
        tol = self.tol
        breaks = [float(self.knots[0])]
        mults = [1]
        for k in self.knots[1:]:
            if k - breaks[-1] <= tol:
                mults[-1] += 1
            else:
                breaks.append(float(k))
                mults.append(1)
        return np.asarray(breaks), np.asarray(mults, dtype=int)

    @property
    def breakpoints(self) -> np.ndarray:
        return self.breakpoints_and_multiplicities()[0]

    def find_span(self, xi: float) -> int:
        """Index ``i`` with ``knots[i] <= xi < knots[i+1]``.

        The right end of the domain maps to the last non-zero span.
        """
        a, b = self.domain
        tol = self.tol
        if xi < a - tol or xi > b + tol:
            raise OutOfDomainError(f"coordinate {xi!r} outside domain [{a}, {b}]")
        xi = min(max(xi, a), b)
        n = self.m - self.p - 1
        if xi >= self.knots[n]:
            # right-closed last span
            i = n - 1
            while self.knots[i + 1] <= self.knots[i]:
                i -= 1
            return i
        lo, hi = self.p, n
        mid = (lo + hi) // 2
        while xi < self.knots[mid] or xi >= self.knots[mid + 1]:
            if xi < self.knots[mid]:
                hi = mid
            else:
                lo = mid
            mid = (lo + hi) // 2
        return mid

    def insert(self, xi: float) -> "KnotVector":
        """Insert one knot at ``xi`` (strictly inside the domain)."""
        a, b = self.domain
        if not (a < xi < b):
            raise InvalidRefinementError(f"knot {xi!r} not strictly inside ({a}, {b})")
        mult = int(np.sum(np.abs(self.knots - xi) <= self.tol))
        if mult >= self.p + 1:
            raise InvalidRefinementError(
                f"inserting {xi!r} would raise its multiplicity above degree+1"
            )
        idx = int(np.searchsorted(self.knots, xi, side="right"))
        return KnotVector(np.insert(self.knots, idx, xi), self.p)


def make_open_knots(p: int, breakpoints, multiplicities=None) -> KnotVector:
    """Open knot vector from breakpoints and interior multiplicities."""
    breakpoints = _as_float_array(breakpoints, "breakpoints")
    if breakpoints.size < 2:
        raise InvalidKnotVectorError("need at least two breakpoints")
    if multiplicities is None:
        multiplicities = np.ones(breakpoints.size - 2, dtype=int)
    multiplicities = np.asarray(multiplicities, dtype=int)
    knots = [breakpoints[0]] * (p + 1)
    for b, m in zip(breakpoints[1:-1], multiplicities):
        knots.extend([b] * int(m))
    knots.extend([breakpoints[-1]] * (p + 1))
    return KnotVector(np.asarray(knots), p)


@dataclass(frozen=True)
class SplineSpace1D:
    """Univariate spline space over an open knot vector."""

    kv: KnotVector
    n: int = field(init=False)
    n_ele: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "n", self.kv.m - self.kv.p - 1)
        object.__setattr__(self, "n_ele", self.kv.breakpoints.size - 1)

    @property
    def p(self) -> int:
        return self.kv.p

    @property
    def domain(self) -> tuple[float, float]:
        return self.kv.domain

    @property
    def breakpoints(self) -> np.ndarray:
        return self.kv.breakpoints

    def element_bounds(self, e: int) -> tuple[float, float]:
        b = self.breakpoints
        return float(b[e]), float(b[e + 1])


def uniform_space(p: int, n_ele: int, a: float = 0.0, b: float = 1.0,
                  regularity: int | None = None) -> SplineSpace1D:
    """Uniform space on ``[a, b]``; default regularity is the maximum p-1."""
    if regularity is None:
        regularity = p - 1
    mult = p - regularity
    breaks = np.linspace(a, b, n_ele + 1)
    mults = np.full(n_ele - 1, mult, dtype=int)
    return SplineSpace1D(make_open_knots(p, breaks, mults))


def find_span(kv: KnotVector, xi: float) -> int:
    return kv.find_span(xi)


@dataclass(frozen=True)
class BasisEval:
    """Non-zero basis functions at one parameter.

    ``values[k, j]`` is the k-th derivative of function ``first + j``;
    all functions outside ``first .. first+p`` vanish at this parameter.
    """

    span: int
    first: int
    values: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.first, self.first + self.values.shape[1])


def find_span_many(kv: KnotVector, xs: np.ndarray) -> np.ndarray:
    """Vectorized :meth:`KnotVector.find_span`."""
    xs = np.asarray(xs, dtype=float)
    a, b = kv.domain
    tol = kv.tol
    if xs.size and (xs.min() < a - tol or xs.max() > b + tol):
        bad = xs[(xs < a - tol) | (xs > b + tol)][0]
        raise OutOfDomainError(f"coordinate {bad!r} outside domain [{a}, {b}]")
    xc = np.clip(xs, a, b)
    spans = np.searchsorted(kv.knots, xc, side="right") - 1
    return np.clip(spans, kv.p, kv.m - kv.p - 2)


def _ders_basis_batch(knots: np.ndarray, p: int, spans: np.ndarray,
                      xs: np.ndarray, nd: int) -> np.ndarray:
    """Values and derivatives of the p+1 non-zero functions at each point.

    Classical recursive derivative algorithm, batched over points; returns
    ``(npts, nd+1, p+1)``.  Derivative orders beyond p are zero.
    """
    npts = xs.size
    nd_eff = min(nd, p)
    ndu = np.empty((npts, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.empty((npts, p + 1))
    right = np.empty((npts, p + 1))
    for j in range(1, p + 1):
        left[:, j] = xs - knots[spans + 1 - j]
        right[:, j] = knots[spans + j] - xs
        saved = np.zeros(npts)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved

    ders = np.zeros((npts, nd + 1, p + 1))
    ders[:, 0, :] = ndu[:, :, p]
    if nd_eff == 0:
        return ders

    a = np.empty((npts, 2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:, 0, 0] = 1.0
        for k in range(1, nd_eff + 1):
            d = np.zeros(npts)
            rk, pk = r - k, p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            ders[:, k, r] = d
            s1, s2 = s2, s1

    fac = float(p)
    for k in range(1, nd_eff + 1):
        ders[:, k, :] *= fac
        fac *= p - k
    return ders


def eval_basis(space: SplineSpace1D, xi: float, max_deriv: int = 0) -> BasisEval:
    """Evaluate the p+1 non-zero basis functions and derivatives at ``xi``."""
    if max_deriv < 0:
        raise ValueError("max_deriv must be non-negative")
    kv = space.kv
    span = kv.find_span(xi)
    a, b = kv.domain
    xi = min(max(xi, a), b)
    values = _ders_basis_batch(kv.knots, kv.p, np.asarray([span]),
                               np.asarray([xi]), max_deriv)[0]
    return BasisEval(span=span, first=span - kv.p, values=values)


def eval_basis_many(space: SplineSpace1D, xs, max_deriv: int = 0):
    """Vectorized :func:`eval_basis`.

    Returns ``(first, values)`` with shapes ``(npts,)`` and
    ``(npts, max_deriv+1, p+1)``.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    kv = space.kv
    spans = find_span_many(kv, xs)
    a, b = kv.domain
    values = _ders_basis_batch(kv.knots, kv.p, spans, np.clip(xs, a, b), max_deriv)
    return spans - kv.p, values


def greville_abscissae(space: SplineSpace1D) -> np.ndarray:
    """Knot averages; for p=0 the span midpoints."""
    kv = space.kv
    p = kv.p
    if p == 0:
        return 0.5 * (kv.knots[:-1] + kv.knots[1:])
    out = np.empty(space.n)
    for i in range(space.n):
        out[i] = kv.knots[i + 1:i + p + 1].mean()
    return out


def exact_integrals(space: SplineSpace1D) -> np.ndarray:
    """Integral of each basis function over the domain.

    Entry ``i`` is ``(knots[i+p+1] - knots[i]) / (p+1)``; the entries sum to
    the domain length by partition of unity.
    """
    kv = space.kv
    return (kv.knots[kv.p + 1:] - kv.knots[:-kv.p - 1]) / (kv.p + 1)


def insert_knot(space: SplineSpace1D, xi: float) -> SplineSpace1D:
    """Insert one knot; the original space is a subspace of the result."""
    return SplineSpace1D(space.kv.insert(xi))


def target_space(solution: SplineSpace1D, element_type: str) -> SplineSpace1D:
    """Space containing the stiffness integrands of ``solution``.

    ``plane`` doubles the degree and lowers each interior regularity by one;
    ``kl_plate`` (fourth-order problems) lowers it by two.  Breakpoints are
    unchanged.  Regularities are reduced per interior knot individually, so
    non-uniform continuity is supported.
    """
    if element_type not in ("plane", "kl_plate"):
        raise ValueError(f"unknown element type {element_type!r}")
    drop = 1 if element_type == "plane" else 2
    p = solution.p
    if element_type == "kl_plate" and p < 3:
        raise UnsupportedContinuityError(
            "kl_plate target needs solution degree >= 3"
        )
    breaks, mults = solution.kv.breakpoints_and_multiplicities()
    p_t = 2 * p
    interior_mults = []
    min_reg = 0 if element_type == "plane" else 2
    for b, m in zip(breaks[1:-1], mults[1:-1]):
        r = p - int(m)
        if r < min_reg:
            raise UnsupportedContinuityError(
                f"interior knot {b} has regularity {r}, too low for {element_type}"
            )
        interior_mults.append(p_t - (r - drop))
    return SplineSpace1D(make_open_knots(p_t, breaks, interior_mults))


# ---------------------------------------------------------------------------
# NURBS curves and surface patches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NurbsCurve2D:
    """Rational curve in the parametric plane of a patch."""

    space: SplineSpace1D
    control_points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)
        if cp.shape != (self.space.n, 2):
            raise ValueError(
                f"expected {self.space.n} 2D control points, got shape {cp.shape}"
            )
        if w.shape != (self.space.n,):
            raise ValueError("one weight per control point required")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")

    @property
    def p(self) -> int:
        return self.space.p

    @property
    def domain(self) -> tuple[float, float]:
        return self.space.domain

    def point(self, t: float) -> np.ndarray:
        return self.derivatives(t, 0)[0]

    def derivatives(self, t: float, max_deriv: int = 1) -> np.ndarray:
        """Curve point and parametric derivatives, shape ``(max_deriv+1, 2)``."""
        be = eval_basis(self.space, t, max_deriv)
        idx = slice(be.first, be.first + self.p + 1)
        w = self.weights[idx]
        cp = self.control_points[idx]
        # homogeneous coordinates A = sum N w P, W = sum N w
        A = be.values @ (cp * w[:, None])
        W = be.values @ w
        out = np.empty((max_deriv + 1, 2))
        out[0] = A[0] / W[0]
        if max_deriv >= 1:
            out[1] = (A[1] - W[1] * out[0]) / W[0]
        if max_deriv >= 2:
            out[2] = (A[2] - 2.0 * W[1] * out[1] - W[2] * out[0]) / W[0]
        for k in range(3, max_deriv + 1):
            acc = A[k].copy()
            for j in range(1, k + 1):
                from math import comb

                acc -= comb(k, j) * W[j] * out[k - j]
            out[k] = acc / W[0]
        return out

    def points(self, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.empty((ts.size, 2))
        for i, t in enumerate(ts):
            out[i] = self.point(float(t))
        return out

    def reversed(self) -> "NurbsCurve2D":
        """Same geometric curve traversed in the opposite direction."""
        kv = self.space.kv
        a, b = kv.domain
        new_knots = (a + b) - kv.knots[::-1]
        return NurbsCurve2D(
            SplineSpace1D(KnotVector(new_knots, kv.p)),
            self.control_points[::-1].copy(),
            self.weights[::-1].copy(),
        )


@dataclass(frozen=True)
class SurfaceEval:
    """Result of evaluating a patch at one parametric point."""

    point: np.ndarray          # physical point, shape (dim,)
    jacobian: np.ndarray       # d(point)/d(u,v), shape (dim, 2)
    first_u: int
    first_v: int
    basis: np.ndarray          # rational basis values, shape (p+1, q+1)
    basis_du: np.ndarray | None = None
    basis_dv: np.ndarray | None = None
    basis_duu: np.ndarray | None = None
    basis_duv: np.ndarray | None = None
    basis_dvv: np.ndarray | None = None
    geo_second: np.ndarray | None = None  # (3, dim): S_uu, S_uv, S_vv


@dataclass(frozen=True)
class NurbsSurfacePatch:
    """Tensor-product rational surface patch."""

    space_u: SplineSpace1D
    space_v: SplineSpace1D
    control_points: np.ndarray  # (n_u, n_v, dim)
    weights: np.ndarray         # (n_u, n_v)

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)
        if cp.ndim != 3 or cp.shape[:2] != (self.space_u.n, self.space_v.n):
            raise ValueError(
                f"control net must be ({self.space_u.n}, {self.space_v.n}, dim)"
            )
        if w.shape != (self.space_u.n, self.space_v.n):
            raise ValueError("weight net must match the control net")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")

    @property
    def dim(self) -> int:
        return self.control_points.shape[2]

    @property
    def degrees(self) -> tuple[int, int]:
        return self.space_u.p, self.space_v.p

    @property
    def parametric_rect(self) -> tuple[float, float, float, float]:
        (u0, u1), (v0, v1) = self.space_u.domain, self.space_v.domain
        return u0, u1, v0, v1

    def evaluate(self, u: float, v: float, max_deriv: int = 1) -> SurfaceEval:
        """Point, Jacobian, and rational basis values/derivatives at ``(u, v)``."""
        if not 0 <= max_deriv <= 2:
            raise ValueError("max_deriv must be 0, 1 or 2")
        bu = eval_basis(self.space_u, u, max_deriv)
        bv = eval_basis(self.space_v, v, max_deriv)
        p, q = self.degrees
        su = slice(bu.first, bu.first + p + 1)
        sv = slice(bv.first, bv.first + q + 1)
        w = self.weights[su, sv]
        cp = self.control_points[su, sv]

        def tp(ku, kv_):
            # tensor product of derivative orders (ku, kv_) of the local block
            return np.outer(bu.values[ku], bv.values[kv_])

        N = tp(0, 0)
        Wterm = w * N
        W = Wterm.sum()
        A = np.tensordot(Wterm, cp, axes=([0, 1], [0, 1]))
        S = A / W

        jac = np.zeros((self.dim, 2))
        der = {}
        if max_deriv >= 1:
            for key, (ku, kv_) in (("u", (1, 0)), ("v", (0, 1))):
                Nd = tp(ku, kv_)
                Wd = (w * Nd).sum()
                Ad = np.tensordot(w * Nd, cp, axes=([0, 1], [0, 1]))
                Sd = (Ad - Wd * S) / W
                der[key] = (Nd, Wd, Sd)
            jac[:, 0] = der["u"][2]
            jac[:, 1] = der["v"][2]

        basis = Wterm / W
        out = dict(point=S, jacobian=jac, first_u=bu.first, first_v=bv.first,
                   basis=basis)
        if max_deriv >= 1:
            for key, attr in (("u", "basis_du"), ("v", "basis_dv")):
                Nd, Wd, _ = der[key]
                out[attr] = (w * Nd - basis * Wd) / W
        if max_deriv >= 2:
            geo2 = np.empty((3, self.dim))
            second = {}
            for row, (key, (ku, kv_)) in enumerate(
                (("uu", (2, 0)), ("uv", (1, 1)), ("vv", (0, 2)))
            ):
                Ndd = tp(ku, kv_)
                Wdd = (w * Ndd).sum()
                Add = np.tensordot(w * Ndd, cp, axes=([0, 1], [0, 1]))
                second[key] = (Ndd, Wdd)
                d1a = der["u" if key[0] == "u" else "v"]
                d1b = der["u" if key[1] == "u" else "v"]
                geo2[row] = (Add - d1a[1] * d1b[2] - d1b[1] * d1a[2] - Wdd * S) / W
            out["geo_second"] = geo2
            Wu, Wv = der["u"][1], der["v"][1]
            Ru = out["basis_du"]
            Rv = out["basis_dv"]
            out["basis_duu"] = (w * second["uu"][0] - 2.0 * Ru * Wu
                                - basis * second["uu"][1]) / W
            out["basis_duv"] = (w * second["uv"][0] - Ru * Wv - Rv * Wu
                                - basis * second["uv"][1]) / W
            out["basis_dvv"] = (w * second["vv"][0] - 2.0 * Rv * Wv
                                - basis * second["vv"][1]) / W
        return SurfaceEval(**out)

    def constant_jacobian(self) -> np.ndarray | None:
        """The Jacobian if the geometry map is affine, else ``None``."""
        u0, u1, v0, v1 = self.parametric_rect
        probes = [(u0, v0), (u1, v0), (u0, v1), (u1, v1),
                  (0.5 * (u0 + u1), 0.5 * (v0 + v1)),
                  (0.3178 * u0 + 0.6822 * u1, 0.7342 * v0 + 0.2658 * v1)]
        jacs = [self.evaluate(u, v, 1).jacobian for u, v in probes]
        ref = jacs[0]
        scale = max(np.abs(ref).max(), 1e-30)
        for j in jacs[1:]:
            if np.abs(j - ref).max() > 1e-12 * scale:
                return None
        return ref

    def is_polynomial(self) -> bool:
        return bool(np.all(self.weights == 1.0))


def eval_nurbs_surface(patch: NurbsSurfacePatch, uv, max_deriv: int = 1) -> SurfaceEval:
    """Functional wrapper around :meth:`NurbsSurfacePatch.evaluate`."""
    return patch.evaluate(float(uv[0]), float(uv[1]), max_deriv)


# ---------------------------------------------------------------------------
# Element grid of a patch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mesh2D:
    """Grid of non-zero knot spans of a patch; elements are v-major indexed:
    flat index = j * n_u + i for element column i and row j."""

    breaks_u: np.ndarray
    breaks_v: np.ndarray

    @classmethod
    def from_spaces(cls, space_u: SplineSpace1D, space_v: SplineSpace1D) -> "Mesh2D":
        return cls(space_u.breakpoints, space_v.breakpoints)

    @classmethod
    def from_patch(cls, patch: NurbsSurfacePatch) -> "Mesh2D":
        return cls.from_spaces(patch.space_u, patch.space_v)

    @property
    def n_u(self) -> int:
        return self.breaks_u.size - 1

    @property
    def n_v(self) -> int:
        return self.breaks_v.size - 1

    @property
    def n_ele(self) -> int:
        return self.n_u * self.n_v

    @property
    def rect(self) -> tuple[float, float, float, float]:
        return (float(self.breaks_u[0]), float(self.breaks_u[-1]),
                float(self.breaks_v[0]), float(self.breaks_v[-1]))

    @property
    def extent(self) -> float:
        u0, u1, v0, v1 = self.rect
        return max(u1 - u0, v1 - v0)

    def flat(self, i: int, j: int) -> int:
        return j * self.n_u + i

    def unflat(self, e: int) -> tuple[int, int]:
        return e % self.n_u, e // self.n_u

    def element_rect(self, e: int) -> tuple[float, float, float, float]:
        i, j = self.unflat(e)
        return (float(self.breaks_u[i]), float(self.breaks_u[i + 1]),
                float(self.breaks_v[j]), float(self.breaks_v[j + 1]))

    def element_area(self, e: int) -> float:
        u0, u1, v0, v1 = self.element_rect(e)
        return (u1 - u0) * (v1 - v0)

    def _locate_1d(self, breaks: np.ndarray, x: np.ndarray) -> np.ndarray:
        # points exactly on a knot line belong to the left/bottom element
        tol = 1e-12 * self.extent
        idx = np.searchsorted(breaks, np.asarray(x, dtype=float) + tol, side="left") - 1
        return np.clip(idx, 0, breaks.size - 2)

    def locate(self, us, vs) -> np.ndarray:
        """Flat element index per point; knot-line points go left/bottom."""
        iu = self._locate_1d(self.breaks_u, np.atleast_1d(us))
        iv = self._locate_1d(self.breaks_v, np.atleast_1d(vs))
        return iv * self.n_u + iu


# ---------------------------------------------------------------------------
# Affine patches (all benchmark geometry is an axis-aligned rectangle)
# ---------------------------------------------------------------------------


def rectangle_patch(width: float, height: float, p: int = 1, q: int | None = None,
                    n_u: int = 1, n_v: int | None = None) -> NurbsSurfacePatch:
    """Identity-parametrized rectangle ``[0, width] x [0, height]``.

    The parametric domain coincides with the physical rectangle, so trimming
    curves can be stated in physical coordinates.  Control points sit at the
    Greville grid, which reproduces the identity map for any degree.
    """
    if q is None:
        q = p
    if n_v is None:
        n_v = n_u
    su = uniform_space(p, n_u, 0.0, width)
    sv = uniform_space(q, n_v, 0.0, height)
    gu = greville_abscissae(su)
    gv = greville_abscissae(sv)
    cp = np.empty((su.n, sv.n, 2))
    cp[:, :, 0] = gu[:, None]
    cp[:, :, 1] = gv[None, :]
    return NurbsSurfacePatch(su, sv, cp, np.ones((su.n, sv.n)))
