"""Quadrature rules: Gauss-Legendre, patch-wise 1D rules, tensor rules.

A patch-wise rule integrates every function of a target spline space exactly
with ceil(n/2) points, where n is the space dimension.  Points and weights
solve the moment system

    sum_k w_k N_i(x_k) = integral of N_i,   i = 1..n,

by a damped Newton iteration on the 2*n_quad unknowns, warm-started from
paired Greville abscissae, with a knot-insertion continuation ladder as
fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NonConvergenceError
from .splines import (
    Mesh2D,
    SplineSpace1D,
    eval_basis_many,
    exact_integrals,
    greville_abscissae,
    insert_knot,
)


@dataclass(frozen=True)
class RuleProvenance:
    """Descriptor of the space (or classical rule) a 1D rule was built for."""

    kind: str                      # "patchwise" | "gauss" | "per_span_gauss"
    degree: int
    knots: tuple[float, ...] = ()


@dataclass(frozen=True)
class QuadRule1D:
    """Ordered quadrature points and positive weights on an interval."""

    points: np.ndarray
    weights: np.ndarray
    domain: tuple[float, float]
    provenance: RuleProvenance

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        a, b = self.domain
        scale = max(abs(b - a), 1.0)
        if pts.size != w.size:
            raise ValueError("points and weights must have equal length")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("points must be strictly increasing")
        if pts.size and (pts[0] <= a - 1e-12 * scale or pts[-1] >= b + 1e-12 * scale):
            raise ValueError("points must lie inside the open domain")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - (b - a)) > 1e-12 * scale * max(1.0, pts.size):
            raise ValueError("weights must sum to the domain length")

    @property
    def count(self) -> int:
        return self.points.size

    def format_text(self) -> str:
        """One ``point weight`` pair per line, 17 significant digits."""
        return "\n".join(
            f"{x:.17g} {w:.17g}" for x, w in zip(self.points, self.weights)
        )


def gauss_legendre(count: int) -> QuadRule1D:
    """Classical Gauss-Legendre rule on [-1, 1]."""
    if count < 1:
        raise ValueError("count must be at least 1")
    x, w = np.polynomial.legendre.leggauss(count)
    return QuadRule1D(x, w, (-1.0, 1.0), RuleProvenance("gauss", 2 * count - 1))


def gauss_on_interval(count: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped to ``[a, b]``."""
    x, w = np.polynomial.legendre.leggauss(count)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def per_span_gauss(space: SplineSpace1D, count_per_span: int) -> QuadRule1D:
    """Element-wise Gauss rule over all non-zero spans of ``space``."""
    breaks = space.breakpoints
    pts, wts = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        x, w = gauss_on_interval(count_per_span, a, b)
        pts.append(x)
        wts.append(w)
    return QuadRule1D(
        np.concatenate(pts), np.concatenate(wts), space.domain,
        RuleProvenance("per_span_gauss", 2 * count_per_span - 1,
                       tuple(space.kv.knots)),
    )


def optimal_point_count(n_basis: int) -> int:
    """Minimum point count to integrate an n-dimensional space exactly."""
    if n_basis < 1:
        raise ValueError("n_basis must be at least 1")
    return (n_basis + 1) // 2


# ---------------------------------------------------------------------------
# Patch-wise rule solver
# ---------------------------------------------------------------------------


def _moment_matrices(space: SplineSpace1D, x: np.ndarray, max_deriv: int = 1):
    """Collocation matrices A (and A') with A[i, k] = N_i(x_k)."""
    first, vals = eval_basis_many(space, x, max_deriv)
    n, m, p1 = space.n, x.size, space.p + 1
    rows = first[:, None] + np.arange(p1)[None, :]
    cols = np.broadcast_to(np.arange(m)[:, None], (m, p1))
    A = np.zeros((n, m))
    A[rows, cols] = vals[:, 0, :]
    if max_deriv == 0:
        return A, None, first
    Ad = np.zeros((n, m))
    Ad[rows, cols] = vals[:, 1, :]
    return A, Ad, first


def _points_admissible(x: np.ndarray, a: float, b: float) -> bool:
    eps = 1e-13 * (b - a)
    return bool(x[0] > a + eps and x[-1] < b - eps and np.all(np.diff(x) > 0))


def _newton_step_banded(A, Ad, first, w, F, p1):
    """Newton step on the moment system in (x, log w) variables.

    The Jacobian is banded once columns are interleaved as
    (x_0, w_0, x_1, w_1, ...); this keeps each iteration O(n * band^2).
    """
    import scipy.linalg as sla

    n, m = A.shape
    cols_x = 2 * np.arange(m)
    lo = int(max(np.max(first + p1 - 1 - cols_x), 0))
    up = int(max(np.max(cols_x + 1 - first), 0))
    ab = np.zeros((lo + up + 1, n))
    for k in range(m):
        rows = np.arange(first[k], first[k] + p1)
        colx, colw = 2 * k, 2 * k + 1
        ab[up + rows - colx, colx] = Ad[rows, k] * w[k]
        ab[up + rows - colw, colw] = A[rows, k] * w[k]
    try:
        step = sla.solve_banded((lo, up), ab, -F)
    except (ValueError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(step)):
        return None
    return step


def _lm_step(A, Ad, first, w, F, p1, mu):
    """Regularized Gauss-Newton step, used when the plain step stalls."""
    n, m = A.shape
    J = np.zeros((n, n))
    for k in range(m):
        rows = slice(first[k], first[k] + p1)
        J[rows, 2 * k] = Ad[rows, k] * w[k]
        J[rows, 2 * k + 1] = A[rows, k] * w[k]
    JTJ = J.T @ J
    diag = np.maximum(np.diag(JTJ), 1e-30)
    try:
        return np.linalg.solve(JTJ + mu * np.diag(diag), -J.T @ F)
    except np.linalg.LinAlgError:
        return None


def _newton(space: SplineSpace1D, x0: np.ndarray, w0: np.ndarray,
            max_iter: int = 100, allow_lm: bool = True):
    """Globalized Newton in (points, log weights); returns (x, w, res) or None.

    Weights stay positive by construction.  A step is accepted only when the
    residual norm decreases and the points stay ordered inside the open
    domain, halving the step length up to 30 times; if backtracking fails,
    a Levenberg-style regularized step is tried with growing damping.
    """
    a, b = space.domain
    tol = 1e-14 * (b - a)
    b_vec = exact_integrals(space)
    m = x0.size
    if 2 * m != space.n:
        raise ValueError("point count must be half the space dimension")
    p1 = space.p + 1
    use_lm = allow_lm and space.n <= 700  # dense fallback only when cheap

    x = x0.copy()
    s = np.log(w0)
    if not (_points_admissible(x, a, b) and np.all(np.isfinite(s))):
        return None
    A, Ad, first = _moment_matrices(space, x)
    F = A @ np.exp(s) - b_vec
    norm_F = np.linalg.norm(F)
    norm_F0 = norm_F
    mu = 0.0
    for it in range(max_iter):
        if np.abs(F).max() < tol:
            return x, np.exp(s), float(np.abs(F).max())
        if not use_lm and it >= 30 and norm_F > 1e-6 * norm_F0:
            return None
        w = np.exp(s)
        accepted = False
        for _ in range(15 if use_lm else 1):  # damping escalation
            if mu == 0.0:
                step = _newton_step_banded(A, Ad, first, w, F, p1)
                if step is None:
                    if not use_lm:
                        return None
                    mu = 1e-10
                    continue
            else:
                step = _lm_step(A, Ad, first, w, F, p1, mu)
                if step is None:
                    mu *= 10.0
                    continue
            dx = step[0::2]
            ds = np.clip(step[1::2], -3.0, 3.0)
            lam = 1.0
            for _ in range(30):
                x_try = x + lam * dx
                if _points_admissible(x_try, a, b):
                    A_t, _, _ = _moment_matrices(space, x_try, max_deriv=0)
                    s_try = s + lam * ds
                    F_t = A_t @ np.exp(s_try) - b_vec
                    if np.linalg.norm(F_t) < (1.0 - 1e-4 * lam) * norm_F:
                        accepted = True
                        break
                lam *= 0.5
            if accepted:
                x, s, F = x_try, s_try, F_t
                A, Ad, first = _moment_matrices(space, x)
                norm_F = np.linalg.norm(F)
                mu = 0.0 if mu < 1e-12 else mu / 3.0
                break
            mu = max(mu * 10.0, 1e-10)
        if not accepted:
            return None
    return None


def _initial_weights(space: SplineSpace1D, x: np.ndarray,
                     w_old: np.ndarray | None = None) -> np.ndarray:
    """Least-squares weights for fixed points, clipped positive.

    With ``w_old`` given (a warm start whose first points carry over), only
    the trailing new weights are fitted against the moment residual.
    """
    A, _, _ = _moment_matrices(space, x)
    b_vec = exact_integrals(space)
    a, b = space.domain
    wmin = 1e-3 * (b - a) / max(x.size, 1)
    if w_old is None or w_old.size == 0:
        w, *_ = np.linalg.lstsq(A, b_vec, rcond=None)
        return np.maximum(w, wmin)
    k = w_old.size
    resid = b_vec - A[:, :k] @ w_old
    w_new, *_ = np.linalg.lstsq(A[:, k:], resid, rcond=None)
    return np.concatenate([w_old, np.maximum(w_new, wmin)])


def _greville_start(space: SplineSpace1D):
    g = greville_abscissae(space)
    x0 = 0.5 * (g[0::2] + g[1::2])
    a, b = space.domain
    eps = 1e-10 * (b - a)
    x0 = np.clip(x0, a + eps, b - eps)
    # knot clustering can collapse consecutive pairs; spread them minimally
    for k in range(1, x0.size):
        if x0[k] <= x0[k - 1]:
            x0[k] = x0[k - 1] + eps
    return x0, _initial_weights(space, x0)


def _widest_span_midpoint(space: SplineSpace1D) -> float:
    breaks = space.breakpoints
    widths = np.diff(breaks)
    k = int(np.argmax(widths))
    return float(0.5 * (breaks[k] + breaks[k + 1]))


def _make_even(space: SplineSpace1D) -> SplineSpace1D:
    """Insert midpoint knots of the widest span until the dimension is even.

    A rule exact on the enlarged space is exact on the original subspace.
    """
    while space.n % 2 == 1:
        space = insert_knot(space, _widest_span_midpoint(space))
    return space


def _split_blocks(space: SplineSpace1D) -> list[SplineSpace1D]:
    """Split at interior knots of full multiplicity p+1.

    Such knots decouple the space into independent pieces; each piece gets
    its own optimal rule.
    """
    from .splines import make_open_knots

    breaks, mults = space.kv.breakpoints_and_multiplicities()
    cut = [0] + [i for i in range(1, breaks.size - 1)
                 if mults[i] == space.p + 1] + [breaks.size - 1]
    if len(cut) == 2:
        return [space]
    blocks = []
    for s, e in zip(cut[:-1], cut[1:]):
        blocks.append(SplineSpace1D(
            make_open_knots(space.p, breaks[s:e + 1], mults[s + 1:e])
        ))
    return blocks


def _continuation(work: SplineSpace1D):
    """Grow the knot vector breakpoint by breakpoint, re-solving after each
    insertion batch with the previous rule as warm start.

    Sub-spaces live on the leading breakpoints of ``work``; B-spline locality
    keeps the old points near their converged positions, so only the points
    added in the freshly covered spans need to settle.  Odd-dimensional
    states get a temporary midpoint knot so every state stays solvable.
    """
    from .splines import make_open_knots

    a, b = work.domain
    breaks, mults = work.kv.breakpoints_and_multiplicities()
    n_breaks = breaks.size
    prev: tuple[np.ndarray, np.ndarray] | None = None  # solved (x, w)
    prev_end = breaks[0]
    last_res = np.inf
    for k in range(1, n_breaks):
        state = _make_even(SplineSpace1D(
            make_open_knots(work.p, breaks[:k + 1], mults[1:k])
        ))
        m = state.n // 2
        solved = None
        if prev is not None and m >= prev[0].size:
            delta = m - prev[0].size
            if delta == 0:
                x0 = prev[0].copy()
            else:
                x_new, _ = gauss_on_interval(delta, prev_end, breaks[k])
                x0 = np.concatenate([prev[0], x_new])
            if _points_admissible(x0, a, breaks[k]):
                w0 = _initial_weights(state, x0,
                                      w_old=prev[1] if delta > 0 else None)
                solved = _newton(state, x0, w0, max_iter=60)
        if solved is None:
            solved = _newton(state, *_greville_start(state), max_iter=60)
        if solved is not None:
            prev = (solved[0], solved[1])
            prev_end = breaks[k]
            last_res = solved[2]
        elif k == n_breaks - 1:
            raise NonConvergenceError(
                "patch-wise rule iteration failed on the final ladder state",
                residual=float(last_res) if np.isfinite(last_res) else None,
            )
    if prev is None or prev_end != breaks[-1]:
        raise NonConvergenceError(
            "continuation ladder ended before reaching the target space",
            residual=float(last_res) if np.isfinite(last_res) else None,
        )
    return prev[0], prev[1], last_res


def _breakpoint_homotopy(work: SplineSpace1D):
    """Morph uniform breakpoints into the actual ones, tracking the rule.

    The multiplicity pattern (hence the dimension) is fixed, so the solved
    rule of one configuration maps through the piecewise-linear breakpoint
    reparametrization into an excellent warm start for the next.  The step
    is halved adaptively when Newton fails.
    """
    from .splines import make_open_knots

    a, b = work.domain
    breaks, mults = work.kv.breakpoints_and_multiplicities()
    uniform = np.linspace(a, b, breaks.size)

    def space_at(theta: float) -> tuple[SplineSpace1D, np.ndarray]:
        bt = (1.0 - theta) * uniform + theta * breaks
        return SplineSpace1D(make_open_knots(work.p, bt, mults[1:-1])), bt

    space0, breaks0 = space_at(0.0)
    solved = _newton(space0, *_greville_start(space0), max_iter=80)
    if solved is None:
        return None
    if np.abs(breaks - uniform).max() <= 1e-14 * abs(b - a):
        return solved
    x, w = solved[0], solved[1]
    theta, step = 0.0, 1.0
    cur_breaks = breaks0
    while theta < 1.0:
        trial = min(1.0, theta + step)
        space_t, breaks_t = space_at(trial)
        x0 = np.interp(x, cur_breaks, breaks_t)
        stretch = np.diff(breaks_t) / np.diff(cur_breaks)
        seg = np.clip(np.searchsorted(cur_breaks, x, side="right") - 1,
                      0, stretch.size - 1)
        w0 = w * stretch[seg]
        solved = _newton(space_t, x0, w0, max_iter=45, allow_lm=False)
        if solved is None:
            step *= 0.5
            if step < 1.0 / 256.0:
                return None
            continue
        x, w = solved[0], solved[1]
        theta, cur_breaks = trial, breaks_t
        step = min(step * 2.0, 1.0)
    return x, w, solved[2]


def _solve_connected(target: SplineSpace1D):
    """Rule for a target space without interior full-multiplicity knots."""
    work = _make_even(target)
    widths = np.diff(work.breakpoints)
    if widths.max() < 5.0 * widths.min():
        # near-uniform spans: one direct shot usually lands
        attempt = _newton(work, *_greville_start(work), max_iter=40)
        if attempt is not None:
            return attempt
    attempt = _breakpoint_homotopy(work)
    if attempt is not None:
        return attempt
    return _continuation(work)


def solve_patchwise_1d(target: SplineSpace1D) -> QuadRule1D:
    """Optimal rule integrating every basis function of ``target`` exactly.

    The point count is ceil(n/2).  If n is odd, one knot is inserted at the
    midpoint of the widest span first; exactness on the enlarged space
    implies exactness on the original one.  Raises
    :class:`~trimquad.errors.NonConvergenceError` when the Newton iteration
    and its continuation ladder (coarse-to-fine knot insertion with warm
    starts) are both exhausted; callers may fall back to per-span Gauss.
    """
    if target.n < 1:
        raise ValueError("target space must have at least one function")
    pts, wts = [], []
    for block in _split_blocks(target):
        x, w, _ = _solve_connected(block)
        pts.append(x)
        wts.append(w)
    x = np.concatenate(pts)
    w = np.concatenate(wts)

    A, _, _ = _moment_matrices(target, x)
    resid = np.abs(A @ w - exact_integrals(target)).max()
    a, b = target.domain
    if resid > 1e-12 * (b - a):
        raise NonConvergenceError(
            "constructed rule fails the exactness contract", residual=float(resid)
        )
    return QuadRule1D(
        x, w, target.domain,
        RuleProvenance("patchwise", target.p, tuple(target.kv.knots)),
    )


# ---------------------------------------------------------------------------
# Tensor-product rules and per-element buckets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadRule2D:
    """Tensor-product 2D rule with per-element point buckets."""

    points: np.ndarray       # (N, 2)
    weights: np.ndarray      # (N,)
    buckets: tuple           # tuple of int arrays, one per flat element

    @property
    def count(self) -> int:
        return self.weights.size


def _bucket_1d(points: np.ndarray, breaks: np.ndarray, extent: float) -> list[np.ndarray]:
    tol = 1e-12 * extent
    idx = np.searchsorted(breaks, points + tol, side="left") - 1
    idx = np.clip(idx, 0, breaks.size - 2)
    return [np.flatnonzero(idx == e) for e in range(breaks.size - 1)]


def tensor_rule(rule_u: QuadRule1D, rule_v: QuadRule1D, mesh: Mesh2D) -> QuadRule2D:
    """All pairwise point products, bucketed by element containment."""
    nu, nv = rule_u.count, rule_v.count
    pts = np.empty((nu * nv, 2))
    pts[:, 0] = np.repeat(rule_u.points, nv)
    pts[:, 1] = np.tile(rule_v.points, nu)
    w = np.repeat(rule_u.weights, nv) * np.tile(rule_v.weights, nu)
    bu = _bucket_1d(rule_u.points, mesh.breaks_u, mesh.extent)
    bv = _bucket_1d(rule_v.points, mesh.breaks_v, mesh.extent)
    buckets = []
    for j in range(mesh.n_v):
        for i in range(mesh.n_u):
            ku, kv = bu[i], bv[j]
            if ku.size and kv.size:
                buckets.append((ku[:, None] * nv + kv[None, :]).ravel())
            else:
                buckets.append(np.empty(0, dtype=int))
    return QuadRule2D(pts, w, tuple(buckets))


def bucket_points(rule: QuadRule2D, mesh: Mesh2D) -> QuadRule2D:
    """Re-bucket arbitrary 2D points; knot-line points go left/bottom."""
    ele = mesh.locate(rule.points[:, 0], rule.points[:, 1])
    buckets = tuple(np.flatnonzero(ele == e) for e in range(mesh.n_ele))
    return replace(rule, buckets=buckets)


# ---------------------------------------------------------------------------
# Point-count predictors and the a-priori decision rule
# ---------------------------------------------------------------------------


@dataclass
class CountReport:
    """Predicted and actual quadrature point counts for one discretization.

    ``n_gauss_total`` counts every element; ``n_gauss_active`` counts only
    non-inactive elements (inactive ones are never integrated) and is the
    baseline used for the decision and the reported ratio.
    """

    p: int
    q: int
    element_type: str
    n_t: int
    n_tra: int
    n_pw: int
    n_ia: int
    n_gauss_total: int
    n_gauss_active: int
    n_pw_trimm: int
    c: float
    use_rule: bool
    n_actual: int | None = None
    n_mapped_t: int | None = None
    n_pw_bucketed: int | None = None

    @property
    def n_ele(self) -> int:
        return self.n_t + self.n_tra + self.n_pw + self.n_ia

    @property
    def ratio(self) -> float | None:
        if self.n_actual is None or self.n_gauss_active == 0:
            return None
        return self.n_actual / self.n_gauss_active

    @property
    def predicted_ratio(self) -> float:
        return self.n_pw_trimm / self.n_gauss_active if self.n_gauss_active else math.nan


def efficiency_constant(p: int, q: int, element_type: str) -> float:
    """Break-even transition/patch-wise element ratio."""
    gauss = (p + 1) * (q + 1)
    if element_type == "plane":
        pw = (p + 2) * (q + 2)
    elif element_type == "kl_plate":
        pw = (p + 3) * (q + 3)
    else:
        raise ValueError(f"unknown element type {element_type!r}")
    return (4.0 * gauss - pw) / pw


def theoretical_ratio_limit(p: int, q: int, element_type: str) -> float:
    """Asymptotic 2D point-count ratio of the patch-wise and Gauss rules."""
    if element_type == "plane":
        return ((p + 2) * (q + 2)) / (4.0 * (p + 1) * (q + 1))
    if element_type == "kl_plate":
        return ((p + 3) * (q + 3)) / (4.0 * (p + 1) * (q + 1))
    raise ValueError(f"unknown element type {element_type!r}")


def predict_counts(p: int, q: int, element_type: str,
                   n_t: int, n_tra: int, n_pw: int, n_ia: int) -> CountReport:
    """Point-count estimate for the mixed method versus per-element Gauss.

    Trimmed and transition elements are charged (p+1)(q+1) Gauss points;
    patch-wise and transition elements additionally carry the asymptotic
    patch-wise density.  Trimmed-cell subdivision overhead is ignored here
    and reported separately with the actual counts.
    """
    gauss_pts = (p + 1) * (q + 1)
    if element_type == "plane":
        pw_pts = (p + 2) * (q + 2) / 4.0
    elif element_type == "kl_plate":
        pw_pts = (p + 3) * (q + 3) / 4.0
    else:
        raise ValueError(f"unknown element type {element_type!r}")
    n_total = n_t + n_tra + n_pw + n_ia
    n_active = n_t + n_tra + n_pw
    n_pred = int(round(gauss_pts * (n_t + n_tra) + pw_pts * (n_pw + n_tra)))
    return CountReport(
        p=p, q=q, element_type=element_type,
        n_t=n_t, n_tra=n_tra, n_pw=n_pw, n_ia=n_ia,
        n_gauss_total=gauss_pts * n_total,
        n_gauss_active=gauss_pts * n_active,
        n_pw_trimm=n_pred,
        c=efficiency_constant(p, q, element_type),
        use_rule=n_pred < gauss_pts * n_active,
    )
