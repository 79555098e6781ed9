"""Trimmed-domain geometry: loops, classification, cell partition, mapping.

Trimming curves live in the parametric plane of a patch.  A loop is either
closed or open with both free ends on the patch boundary; open loops are
closed by walking the patch boundary counter-clockwise between their
endpoints.  Validity of a point is a winding-number test against every loop
followed by the loop's explicit keep rule.

Trimmed elements are partitioned into integration cells with at most one
curved edge each; Gauss points are carried onto a cell by the linear
blending of its straight bottom edge and its (possibly curved) top edge,
with collapsed-edge handling for three-sided cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    InvertedCellError,
    MalformedTrimError,
    UnsupportedTrimTopology,
)
from .splines import Mesh2D, NurbsCurve2D, SplineSpace1D

# element labels
ACTIVE, TRIMMED, INACTIVE = 0, 1, 2
# function labels
F_UNTRIMMED, F_TRIMMED, F_INACTIVE = 0, 1, 2
# element groups
G_PW, G_TRA, G_T, G_IA = 0, 1, 2, 3

GROUP_NAMES = {G_PW: "pw", G_TRA: "tra", G_T: "t", G_IA: "ia"}

# elements with less valid area than this fraction are treated as inactive
SLIVER_FRACTION = 1e-10


# ---------------------------------------------------------------------------
# Rectangle boundary helpers
# ---------------------------------------------------------------------------


def _rect_perimeter_coord(rect, pt, tol):
    """Perimeter coordinate of a boundary point (counter-clockwise from the
    lower-left corner); ``None`` if the point is not on the boundary."""
    u0, u1, v0, v1 = rect
    x, y = pt
    du, dv = u1 - u0, v1 - v0
    if abs(y - v0) <= tol and u0 - tol <= x <= u1 + tol:
        return float(np.clip(x - u0, 0, du))
    if abs(x - u1) <= tol and v0 - tol <= y <= v1 + tol:
        return float(du + np.clip(y - v0, 0, dv))
    if abs(y - v1) <= tol and u0 - tol <= x <= u1 + tol:
        return float(du + dv + np.clip(u1 - x, 0, du))
    if abs(x - u0) <= tol and v0 - tol <= y <= v1 + tol:
        return float(2 * du + dv + np.clip(v1 - y, 0, dv))
    return None


def boundary_walk_ccw(rect, start, end, tol):
    """Corners passed when walking the boundary counter-clockwise from
    ``start`` to ``end`` (both exclusive)."""
    u0, u1, v0, v1 = rect
    du, dv = u1 - u0, v1 - v0
    per = 2 * (du + dv)
    s = _rect_perimeter_coord(rect, start, tol)
    e = _rect_perimeter_coord(rect, end, tol)
    if s is None or e is None:
        raise MalformedTrimError("endpoint does not lie on the boundary")
    corner_pts = [(u1, v0), (u1, v1), (u0, v1), (u0, v0)]
    corner_s = [du, du + dv, 2 * du + dv, per]
    d_end = (e - s) % per
    if d_end <= tol:
        d_end = per
    out = []
    for i in range(4):
        d = (corner_s[i] - s) % per
        if tol < d < d_end - tol:
            out.append((d, np.asarray(corner_pts[i], dtype=float)))
    out.sort(key=lambda item: item[0])
    return [pt for _, pt in out]


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------


@dataclass
class TrimLoop:
    """Ordered curve segments with an explicit keep rule.

    ``keep`` is ``"outside"`` (the enclosed region is removed, e.g. a hole)
    or ``"inside"`` (only the enclosed region remains valid).  Closed loops
    end where they start; open loops must start and end on the patch
    boundary and are closed by the counter-clockwise boundary walk.
    """

    segments: list
    keep: str = "outside"
    _flat_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.keep not in ("outside", "inside"):
            raise ValueError("keep rule must be 'outside' or 'inside'")
        if not self.segments:
            raise MalformedTrimError("a loop needs at least one curve segment")

    def endpoints(self):
        return (self.segments[0].point(self.segments[0].domain[0]),
                self.segments[-1].point(self.segments[-1].domain[1]))

    def is_closed(self, rect) -> bool:
        start, end = self.endpoints()
        extent = max(rect[1] - rect[0], rect[3] - rect[2])
        return bool(np.linalg.norm(start - end) <= 1e-10 * extent)

    def validate(self, rect):
        extent = max(rect[1] - rect[0], rect[3] - rect[2])
        tol = 1e-10 * extent
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            if np.linalg.norm(a.point(a.domain[1]) - b.point(b.domain[0])) > tol:
                raise MalformedTrimError("consecutive loop segments do not connect")
        if not self.is_closed(rect):
            for pt in self.endpoints():
                if _rect_perimeter_coord(rect, pt, tol) is None:
                    raise MalformedTrimError(
                        "open loop endpoint lies off the patch boundary")

    def reversed(self) -> "TrimLoop":
        """The loop traversed backwards, keep rule unchanged."""
        return TrimLoop([c.reversed() for c in reversed(self.segments)], self.keep)

    def flattened(self, rect, sag: float):
        """Closed polyline approximation with per-vertex provenance.

        Returns ``(points, seg_index, params)``; closure vertices added on
        the patch boundary carry ``seg_index = -1``.
        """
        key = (tuple(np.round(rect, 14)), float(sag))
        if key in self._flat_cache:
            return self._flat_cache[key]
        pts_blocks, seg_ids, params = [], [], []
        for si, curve in enumerate(self.segments):
            ts = _flatten_params(curve, sag)
            qs = curve.points(ts)
            if si > 0:
                ts, qs = ts[1:], qs[1:]
            pts_blocks.append(qs)
            seg_ids.extend([si] * len(ts))
            params.extend(ts.tolist())
        pts = np.vstack(pts_blocks)
        if not self.is_closed(rect):
            tol = 1e-10 * max(rect[1] - rect[0], rect[3] - rect[2])
            for corner in boundary_walk_ccw(rect, pts[-1], pts[0], tol):
                pts = np.vstack([pts, corner])
                seg_ids.append(-1)
                params.append(np.nan)
        if np.linalg.norm(pts[0] - pts[-1]) > 0:
            pts = np.vstack([pts, pts[0]])
            seg_ids.append(-1)
            params.append(np.nan)
        out = (pts, np.asarray(seg_ids), np.asarray(params))
        self._flat_cache[key] = out
        return out


def _flatten_params(curve: NurbsCurve2D, sag: float) -> np.ndarray:
    """Adaptive parameter samples whose chords deviate less than ``sag``."""
    out = []

    def refine(a, b, pa, pb, depth):
        tm = 0.5 * (a + b)
        pm = curve.point(tm)
        if np.linalg.norm(pm - 0.5 * (pa + pb)) > sag and depth < 24:
            refine(a, tm, pa, pm, depth + 1)
            out.append(tm)
            refine(tm, b, pm, pb, depth + 1)

    breaks = curve.space.breakpoints
    for a, b in zip(breaks[:-1], breaks[1:]):
        # a few interior seeds so inflections are never missed
        inner = np.linspace(a, b, 9)
        out.append(a)
        for c, d in zip(inner[:-1], inner[1:]):
            refine(c, d, curve.point(c), curve.point(d), 0)
            out.append(d)
    return np.unique(np.asarray(out))


# ---------------------------------------------------------------------------
# Point classification
# ---------------------------------------------------------------------------


def _winding_inside(poly: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Non-zero winding-number test of ``pts`` against a closed polyline."""
    x, y = pts[:, 0], pts[:, 1]
    wn = np.zeros(pts.shape[0], dtype=int)
    x0, y0 = poly[:-1, 0], poly[:-1, 1]
    x1, y1 = poly[1:, 0], poly[1:, 1]
    chunk = max(1, int(4e6 // max(pts.shape[0], 1)))
    for s in range(0, x0.size, chunk):
        a0, a1 = x0[s:s + chunk], x1[s:s + chunk]
        b0, b1 = y0[s:s + chunk], y1[s:s + chunk]
        up = (b0[None, :] <= y[:, None]) & (b1[None, :] > y[:, None])
        dn = (b0[None, :] > y[:, None]) & (b1[None, :] <= y[:, None])
        cross = ((a1 - a0)[None, :] * (y[:, None] - b0[None, :])
                 - (x[:, None] - a0[None, :]) * (b1 - b0)[None, :])
        wn += np.sum(up & (cross > 0), axis=1) - np.sum(dn & (cross < 0), axis=1)
    return wn != 0


def _distance_to_polyline(poly: np.ndarray, pts: np.ndarray):
    """Distance to the polyline and the index of the nearest vertex."""
    best = np.full(pts.shape[0], np.inf)
    best_v = np.zeros(pts.shape[0], dtype=int)
    a = poly[:-1]
    d = poly[1:] - poly[:-1]
    len2 = np.maximum((d ** 2).sum(axis=1), 1e-300)
    chunk = max(1, int(2e6 // max(pts.shape[0], 1)))
    for s in range(0, a.shape[0], chunk):
        diff = pts[:, None, :] - a[None, s:s + chunk, :]
        t = np.clip((diff * d[None, s:s + chunk, :]).sum(-1)
                    / len2[None, s:s + chunk], 0.0, 1.0)
        proj = a[None, s:s + chunk, :] + t[..., None] * d[None, s:s + chunk, :]
        dist = np.linalg.norm(pts[:, None, :] - proj, axis=-1)
        idx = dist.argmin(axis=1)
        val = dist[np.arange(pts.shape[0]), idx]
        better = val < best
        best[better] = val[better]
        best_v[better] = idx[better] + s
    return best, best_v


def _project_to_loop(loop: TrimLoop, rect, q, vertex_hint: int, sag: float):
    """Nearest loop point to ``q``; returns (point, unit tangent)."""
    pts, seg_ids, params = loop.flattened(rect, sag)
    vi = int(np.clip(vertex_hint, 0, len(seg_ids) - 1))
    si = seg_ids[vi]
    if si < 0:  # boundary-closure edge: straight
        a = pts[vi - 1] if vi > 0 else pts[vi]
        b = pts[min(vi + 1, pts.shape[0] - 1)]
        d = b - a
        nd = np.linalg.norm(d)
        if nd == 0:
            return pts[vi], np.array([1.0, 0.0])
        t = np.clip(np.dot(q - a, d) / nd ** 2, 0.0, 1.0)
        return a + t * d, d / nd
    curve = loop.segments[si]
    t = float(params[vi])
    t0, t1 = curve.domain
    for _ in range(30):
        c, dc, ddc = curve.derivatives(t, 2)
        g = float(np.dot(q - c, dc))
        h = float(np.dot(q - c, ddc) - np.dot(dc, dc))
        if h == 0:
            break
        t_new = float(np.clip(t - g / h, t0, t1))
        done = abs(t_new - t) < 1e-15 * (t1 - t0)
        t = t_new
        if done:
            break
    c, dc = curve.derivatives(t, 1)
    nd = np.linalg.norm(dc)
    return c, dc / (nd if nd > 0 else 1.0)


def _inside_loop(loop: TrimLoop, rect, pts: np.ndarray) -> np.ndarray:
    """Winding test with near-curve points resolved by normal-offset sign."""
    extent = max(rect[1] - rect[0], rect[3] - rect[2])
    sag = 1e-8 * extent
    band = 10.0 * sag
    poly, _, _ = loop.flattened(rect, sag)
    inside = _winding_inside(poly, pts)
    dist, vhint = _distance_to_polyline(poly, pts)
    for i in np.flatnonzero(dist <= band):
        c, tangent = _project_to_loop(loop, rect, pts[i], int(vhint[i]), sag)
        offset = pts[i] - c
        side = tangent[0] * offset[1] - tangent[1] * offset[0]
        normal = np.array([-tangent[1], tangent[0]])
        probe = c + (normal if side >= 0 else -normal) * (4.0 * band)
        inside[i] = _winding_inside(poly, probe[None, :])[0]
    return inside


def classify_points(loops, pts, rect) -> np.ndarray:
    """Validity of parametric points under all loops' keep rules."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    valid = np.ones(pts.shape[0], dtype=bool)
    for loop in loops:
        inside = _inside_loop(loop, rect, pts)
        valid &= inside if loop.keep == "inside" else ~inside
    return valid


def classify_point(loops, uv, rect) -> bool:
    """Scalar wrapper around :func:`classify_points`."""
    return bool(classify_points(loops, np.asarray(uv, dtype=float)[None, :],
                                rect)[0])


# ---------------------------------------------------------------------------
# Curve / grid-line intersections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridCrossing:
    """A curve parameter where a knot line is met."""

    t: float
    axis: int          # 0: vertical line u = value, 1: horizontal line
    value: float
    tangential: bool


def intersect_with_gridlines(curve: NurbsCurve2D, mesh: Mesh2D) -> list:
    """All crossings of a curve with interior knot lines, sorted by t.

    Transversal crossings are bracketed by 50 samples per knot span of the
    curve and polished by bisection; tangential touches (vanishing
    transversal velocity) are flagged, not treated as crossings.
    """
    extent = mesh.extent
    tol_tan = 1e-10 * extent
    crossings: list[GridCrossing] = []
    lines = (mesh.breaks_u[1:-1], mesh.breaks_v[1:-1])
    breaks = curve.space.breakpoints
    t_lo, t_hi = curve.domain
    for a, b in zip(breaks[:-1], breaks[1:]):
        ts = np.linspace(a, b, 50)
        qs = curve.points(ts)
        for axis in (0, 1):
            coords = qs[:, axis]
            lo, hi = coords.min() - tol_tan, coords.max() + tol_tan
            for value in lines[axis]:
                if not (lo <= value <= hi):
                    continue
                f = coords - value
                sign_change = np.flatnonzero(f[:-1] * f[1:] < 0)
                for k in sign_change:
                    root = brentq(lambda t: curve.point(t)[axis] - value,
                                  ts[k], ts[k + 1], xtol=1e-15 * (b - a))
                    d = curve.derivatives(float(root), 1)[1][axis]
                    crossings.append(GridCrossing(
                        float(root), axis, float(value),
                        tangential=bool(abs(d) <= tol_tan)))
                # samples landing exactly on the line (span boundaries and
                # construction points): transversal iff the sign flips
                # across the zero
                for k in np.flatnonzero(np.abs(f) <= tol_tan):
                    t_star = float(ts[k])
                    dt = 1e-6 * (b - a)
                    fl = curve.point(max(t_star - dt, t_lo))[axis] - value
                    fr = curve.point(min(t_star + dt, t_hi))[axis] - value
                    crossings.append(GridCrossing(
                        t_star, axis, float(value),
                        tangential=not bool(fl * fr < 0)))
                if not sign_change.size and np.abs(f).min() <= tol_tan:
                    # tangential touch: refine the extremum parabolically
                    k = int(np.argmin(np.abs(f)))
                    t_star = ts[k]
                    if 0 < k < ts.size - 1:
                        denom = f[k - 1] - 2 * f[k] + f[k + 1]
                        if denom != 0:
                            t_star = ts[k] - 0.5 * (ts[1] - ts[0]) \
                                * (f[k + 1] - f[k - 1]) / denom
                    if abs(curve.point(float(t_star))[axis] - value) <= tol_tan:
                        crossings.append(GridCrossing(
                            float(t_star), axis, float(value), tangential=True))
    crossings.sort(key=lambda c: (c.t, c.axis, c.value))
    merged: list[GridCrossing] = []
    tol_t = 1e-10 * (t_hi - t_lo)
    for c in crossings:
        if merged and abs(c.t - merged[-1].t) <= tol_t \
                and c.axis == merged[-1].axis and c.value == merged[-1].value:
            if merged[-1].tangential and not c.tangential:
                merged[-1] = c  # a transversal finding wins over a touch
            continue
        merged.append(c)
    return merged


# ---------------------------------------------------------------------------
# Curve pieces per element
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurvePiece:
    """Portion of a loop segment lying inside exactly one element."""

    loop_index: int
    seg_index: int
    curve: NurbsCurve2D
    t0: float
    t1: float
    element: int

    @property
    def start(self) -> np.ndarray:
        return self.curve.point(self.t0)

    @property
    def end(self) -> np.ndarray:
        return self.curve.point(self.t1)

    def chord_length(self) -> float:
        qs = self.curve.points(np.linspace(self.t0, self.t1, 9))
        return float(np.linalg.norm(np.diff(qs, axis=0), axis=1).sum())


def split_into_pieces(loops, mesh: Mesh2D):
    """Cut every loop segment at its transversal grid crossings.

    Returns ``(pieces_by_element, tangential_touches)``.
    """
    pieces: dict[int, list[CurvePiece]] = {}
    touches: list[GridCrossing] = []
    for li, loop in enumerate(loops):
        for si, curve in enumerate(loop.segments):
            t0, t1 = curve.domain
            crossings = intersect_with_gridlines(curve, mesh)
            touches.extend(c for c in crossings if c.tangential)
            # also cut where the curve itself is merely C0 (kinks), so that
            # every piece is a smooth arc suitable as a blend-cell edge
            breaks, mults = curve.space.kv.breakpoints_and_multiplicities()
            kinks = [float(b) for b, m in zip(breaks[1:-1], mults[1:-1])
                     if m >= curve.p]
            cuts = np.unique(np.asarray(
                [t0, t1] + kinks
                + [c.t for c in crossings if not c.tangential]))
            for a, b in zip(cuts[:-1], cuts[1:]):
                if b - a <= 1e-12 * (t1 - t0):
                    continue
                mid = curve.point(0.5 * (a + b))
                e = int(mesh.locate([mid[0]], [mid[1]])[0])
                pieces.setdefault(e, []).append(
                    CurvePiece(li, si, curve, float(a), float(b), e))
    return pieces, touches


# ---------------------------------------------------------------------------
# Blend cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlendCell:
    """Integration cell: straight bottom edge, straight or curved top edge.

    The map is ``Q(xi, eta) = (1 - eta) * lerp(b0, b1, xi) + eta * T(xi)``
    where ``T`` is the top edge; a collapsed bottom (b0 == b1) gives the
    three-sided form of the same map.  ``t0 > t1`` runs the curve backwards.
    """

    b0: np.ndarray
    b1: np.ndarray
    curve: NurbsCurve2D | None
    t0: float
    t1: float
    top0: np.ndarray | None = None   # straight top when curve is None
    top1: np.ndarray | None = None

    def top(self, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if self.curve is None:
            return ((1 - xi)[:, None] * np.asarray(self.top0)
                    + xi[:, None] * np.asarray(self.top1))
        ts = self.t0 + xi * (self.t1 - self.t0)
        return self.curve.points(ts)

    def top_tangent(self, xi) -> np.ndarray:
        """d top / d xi."""
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        if self.curve is None:
            return np.broadcast_to(np.asarray(self.top1)
                                   - np.asarray(self.top0), (xi.size, 2)).copy()
        ts = self.t0 + xi * (self.t1 - self.t0)
        out = np.empty((xi.size, 2))
        for i, t in enumerate(ts):
            out[i] = self.curve.derivatives(float(t), 1)[1] * (self.t1 - self.t0)
        return out

    @property
    def curve_degree(self) -> int:
        return 1 if self.curve is None else self.curve.p

    def flipped(self) -> "BlendCell":
        return BlendCell(np.asarray(self.b1), np.asarray(self.b0), self.curve,
                         self.t1, self.t0, top0=self.top1, top1=self.top0)

    def area(self) -> float:
        """Signed area by Green's theorem along b0->b1->top(1)->top(0)->b0."""
        def seg(pa, pb):
            return 0.5 * (pa[0] * pb[1] - pb[0] * pa[1])

        xg, wg = np.polynomial.legendre.leggauss(16)
        xi = 0.5 * (xg + 1.0)
        w = 0.5 * wg
        top = self.top(xi)
        tan = self.top_tangent(xi)
        i_top = float(np.sum(w * 0.5 * (top[:, 0] * tan[:, 1]
                                        - top[:, 1] * tan[:, 0])))
        ends = self.top(np.array([0.0, 1.0]))
        return (seg(self.b0, self.b1) + seg(self.b1, ends[1])
                - i_top + seg(ends[0], self.b0))

    def map_points(self, xi: np.ndarray, eta: np.ndarray):
        """Map (xi, eta) in [0,1]^2 into the cell; returns points and det J."""
        b0 = np.asarray(self.b0, dtype=float)
        b1 = np.asarray(self.b1, dtype=float)
        bottom = (1 - xi)[:, None] * b0 + xi[:, None] * b1
        top = self.top(xi)
        tan_top = self.top_tangent(xi)
        pts = (1 - eta)[:, None] * bottom + eta[:, None] * top
        d_xi = (1 - eta)[:, None] * (b1 - b0) + eta[:, None] * tan_top
        d_eta = top - bottom
        det = d_xi[:, 0] * d_eta[:, 1] - d_xi[:, 1] * d_eta[:, 0]
        return pts, det


@dataclass(frozen=True)
class CellPartition:
    """Integration cells covering the valid region of one trimmed element."""

    element: int
    cells: tuple
    valid_area: float


def map_gauss_to_cell(cell: BlendCell, p: int, q: int):
    """Tensor Gauss points carried onto the cell by its blending map.

    The per-direction count is ``max(p, q, curve degree) + 1``; each point's
    weight is the Gauss weight times the blending-map Jacobian.  Raises
    :class:`InvertedCellError` on a non-positive Jacobian.
    """
    n1 = max(p, q, cell.curve_degree) + 1
    xg, wg = np.polynomial.legendre.leggauss(n1)
    x01 = 0.5 * (xg + 1.0)
    w01 = 0.5 * wg
    xi = np.repeat(x01, n1)
    eta = np.tile(x01, n1)
    w2 = np.repeat(w01, n1) * np.tile(w01, n1)
    pts, det = cell.map_points(xi, eta)
    if np.any(det <= 0):
        raise InvertedCellError(
            "blending map Jacobian is not positive on the cell")
    return pts, w2 * det


# ---------------------------------------------------------------------------
# Cell partition of one trimmed element
# ---------------------------------------------------------------------------


def _chain_from_pieces(pieces, extent):
    """Order an element's pieces into one open chain."""
    tol = 1e-9 * extent
    remaining = list(pieces)
    chain = [remaining.pop(0)]
    grew = True
    while remaining and grew:
        grew = False
        for cand in list(remaining):
            if np.linalg.norm(cand.start - chain[-1].end) <= tol:
                chain.append(cand)
                remaining.remove(cand)
                grew = True
            elif np.linalg.norm(cand.end - chain[0].start) <= tol:
                chain.insert(0, cand)
                remaining.remove(cand)
                grew = True
    if remaining:
        raise UnsupportedTrimTopology(
            "element is cut by more than one disjoint curve chain; "
            "refine the mesh")
    if np.linalg.norm(chain[0].start - chain[-1].end) <= tol:
        raise UnsupportedTrimTopology(
            "a trimming loop is entirely contained in one element; "
            "refine the mesh")
    return chain


def _chain_point_tangent(chain):
    piece = chain[len(chain) // 2]
    tm = 0.5 * (piece.t0 + piece.t1)
    c, dc = piece.curve.derivatives(tm, 1)
    nd = np.linalg.norm(dc)
    return c, dc / (nd if nd > 0 else 1.0)


def _edge_index(rect, pt, tol):
    """0 bottom, 1 right, 2 top, 3 left; ``None`` off the boundary."""
    u0, u1, v0, v1 = rect
    if abs(pt[1] - v0) <= tol:
        return 0
    if abs(pt[0] - u1) <= tol:
        return 1
    if abs(pt[1] - v1) <= tol:
        return 2
    if abs(pt[0] - u0) <= tol:
        return 3
    return None


def _curved_band(b0, b1, chain, backwards):
    """Curved cells between the straight edge (b0, b1) and the chain.

    One cell per chain piece with spokes landing on the straight edge at
    chord-length fractions; ``backwards`` runs the chain end-to-start so
    that b0 always pairs with the first traversed chain point.
    """
    pieces = list(reversed(chain)) if backwards else list(chain)
    lengths = np.array([p.chord_length() for p in pieces])
    fracs = np.concatenate([[0.0], np.cumsum(lengths) / lengths.sum()])
    b0 = np.asarray(b0, dtype=float)
    b1 = np.asarray(b1, dtype=float)
    cells = []
    for k, piece in enumerate(pieces):
        a = b0 + fracs[k] * (b1 - b0)
        b = b0 + fracs[k + 1] * (b1 - b0)
        if backwards:
            cells.append(BlendCell(a, b, piece.curve, piece.t1, piece.t0))
        else:
            cells.append(BlendCell(a, b, piece.curve, piece.t0, piece.t1))
    return cells


def _walk_chain_cells(walk_pts, chain, backwards):
    """Fraction-matched ruled cells between a straight walk and the chain.

    Both paths are parametrized by cumulative length and cut at the merged
    breakpoints (walk corners and chain junctions), so every cell has a
    straight bottom on one walk segment and one smooth curved top piece.
    Chain junctions that touch the walk (the valid region pinches there)
    anchor the two parametrizations together, which keeps the ruled maps
    from folding near such tangency points.  Used for chains too long to
    be fanned from a single anchor.
    """
    pieces = list(reversed(chain)) if backwards else list(chain)
    lens = np.array([p.chord_length() for p in pieces])
    cfr = np.concatenate([[0.0], np.cumsum(lens) / lens.sum()])
    walk_pts = [np.asarray(w, dtype=float) for w in walk_pts]
    wseg = np.diff(np.asarray(walk_pts), axis=0)
    wlen = np.linalg.norm(wseg, axis=1)
    total_wlen = wlen.sum()
    wfr = np.concatenate([[0.0], np.cumsum(wlen) / total_wlen])
    wx = np.array([p[0] for p in walk_pts])
    wy = np.array([p[1] for p in walk_pts])

    def walk_at(f):
        return np.array([np.interp(f, wfr, wx), np.interp(f, wfr, wy)])

    def walk_fraction_of(pt):
        """Walk fraction of a point lying on the walk, or None."""
        tol = 1e-9 * max(total_wlen, 1e-300)
        best = (np.inf, None)
        acc = 0.0
        for a, d, ln in zip(walk_pts[:-1], wseg, wlen):
            if ln <= 0:
                continue
            t = np.clip(np.dot(pt - a, d) / ln ** 2, 0.0, 1.0)
            dist = np.linalg.norm(pt - (a + t * d))
            if dist < best[0]:
                best = (dist, (acc + t * ln) / total_wlen)
            acc += ln
        return best[1] if best[0] <= tol else None

    # anchors tie chain fractions to walk fractions (ends + touch points)
    anchors = [(0.0, 0.0)]
    for j in range(1, len(pieces)):
        pt = pieces[j].end if backwards else pieces[j].start
        wf = walk_fraction_of(np.asarray(pt))
        if wf is not None and wf > anchors[-1][1] + 1e-12:
            anchors.append((cfr[j], wf))
    anchors.append((1.0, 1.0))
    a_c = np.array([a[0] for a in anchors])
    a_w = np.array([a[1] for a in anchors])

    def phi(chain_f):
        return np.interp(chain_f, a_c, a_w)

    def phi_inv(walk_f):
        return np.interp(walk_f, a_w, a_c)

    events = np.unique(np.concatenate([cfr, phi_inv(wfr)]))
    cells = []
    for fa, fb in zip(events[:-1], events[1:]):
        if fb - fa < 1e-12:
            continue
        pi = int(np.clip(np.searchsorted(cfr, 0.5 * (fa + fb)) - 1,
                         0, len(pieces) - 1))
        piece = pieces[pi]
        span = cfr[pi + 1] - cfr[pi]
        s0 = (fa - cfr[pi]) / span
        s1 = (fb - cfr[pi]) / span
        if backwards:
            ta = piece.t1 + s0 * (piece.t0 - piece.t1)
            tb = piece.t1 + s1 * (piece.t0 - piece.t1)
        else:
            ta = piece.t0 + s0 * (piece.t1 - piece.t0)
            tb = piece.t0 + s1 * (piece.t1 - piece.t0)
        cells.append(BlendCell(walk_at(phi(fa)), walk_at(phi(fb)),
                               piece.curve, ta, tb))
    return cells


def partition_trimmed_element(mesh: Mesh2D, element: int, pieces,
                              loops, rect) -> CellPartition:
    """Partition the valid region of a trimmed element into blend cells.

    Supported topology: one chain entering and leaving through element
    edges (same, adjacent or opposite, corners included).  The possible
    boundary-walk configurations yield one to three cells; anything else
    raises :class:`UnsupportedTrimTopology`.
    """
    er = mesh.element_rect(element)
    u0, u1, v0, v1 = er
    tol = 1e-9 * mesh.extent
    chain = _chain_from_pieces(pieces, mesh.extent)
    A, B = chain[0].start, chain[-1].end
    if _edge_index(er, A, tol) is None or _edge_index(er, B, tol) is None:
        raise UnsupportedTrimTopology(
            "a curve chain ends inside an element; refine the mesh")

    # valid side of the chain: left or right of the direction A -> B
    c_mid, tangent = _chain_point_tangent(chain)
    normal = np.array([-tangent[1], tangent[0]])
    eps = 1e-6 * min(u1 - u0, v1 - v0)
    left_ok = classify_point(loops, c_mid + eps * normal, rect)
    right_ok = classify_point(loops, c_mid - eps * normal, rect)
    if left_ok == right_ok:
        raise UnsupportedTrimTopology(
            "cannot determine the valid side of a trimming chain")
    # the chain P -> Q keeps the valid region on its left; the region
    # boundary is the chain plus the CCW element-boundary walk from Q to P
    if left_ok:
        P, Q, backwards = A, B, False
    else:
        P, Q, backwards = B, A, True

    corners = [c for c in boundary_walk_ccw(er, Q, P, tol)
               if np.linalg.norm(c - P) > tol and np.linalg.norm(c - Q) > tol]
    k = len(corners)
    cells: list[BlendCell] = []
    if k == 0:
        # lune between the chain and part of one edge
        cells += _curved_band(Q, P, chain, not backwards)
    elif k == 1:
        # corner triangle with curved hypotenuse (collapsed bottom)
        cells += _curved_band(corners[0], corners[0], chain, backwards)
    elif k == 2:
        # band between the chain and the opposite edge
        cells += _curved_band(corners[1], corners[0], chain, backwards)
    elif k == 3:
        c1, c2, c3 = (np.asarray(c) for c in corners)
        if len(chain) == 1:
            # pentagon (corner-cut complement): fan from the corner
            # opposite the cut, which sees a single arc broadside
            cells.append(BlendCell(np.asarray(Q), c1, None, 0.0, 1.0,
                                   top0=c2, top1=c2))
            cells.append(BlendCell(c3, np.asarray(P), None, 0.0, 1.0,
                                   top0=c2, top1=c2))
            cells += _curved_band(c2, c2, chain, backwards)
        else:
            # long chains wrap too far for one anchor; pair the chain with
            # the boundary walk instead
            cells += _walk_chain_cells([np.asarray(P), c3, c2, c1,
                                        np.asarray(Q)], chain, backwards)
    elif k == 4:
        # both chain ends on one edge, complement side valid: two straight
        # blocks beside perpendicular cuts plus the curved middle band
        edge = _edge_index(er, P, tol)
        if edge in (0, 2):
            vy = v1 if edge == 0 else v0
            foot_p = np.array([P[0], vy])
            foot_q = np.array([Q[0], vy])
        else:
            vx = u1 if edge == 3 else u0
            foot_p = np.array([vx, P[1]])
            foot_q = np.array([vx, Q[1]])
        c1, c2, c3, c4 = (np.asarray(c) for c in corners)
        cells.append(BlendCell(np.asarray(Q), c1, None, 0.0, 1.0,
                               top0=foot_q, top1=c2))
        cells.append(BlendCell(c4, np.asarray(P), None, 0.0, 1.0,
                               top0=c3, top1=foot_p))
        cells += _curved_band(foot_q, foot_p, chain, not backwards)
    else:
        raise UnsupportedTrimTopology(
            f"unexpected boundary walk with {k} corners in one element")

    ok_cells = []
    area_total = 0.0
    ele_area = mesh.element_area(element)
    for cell in cells:
        a = cell.area()
        if a < 0:
            cell, a = cell.flipped(), -a
        if a <= 1e-14 * ele_area:
            continue
        area_total += a
        ok_cells.append(cell)
    return CellPartition(element, tuple(ok_cells), float(area_total))


# ---------------------------------------------------------------------------
# Element / function classification and the four-group partition
# ---------------------------------------------------------------------------


@dataclass
class DomainClassification:
    """Element labels, function labels and the four-group element partition."""

    mesh: Mesh2D
    element_labels: np.ndarray            # (n_ele,) ACTIVE/TRIMMED/INACTIVE
    function_labels: np.ndarray           # (n_fu, n_fv)
    groups: np.ndarray                    # (n_ele,) G_PW/G_TRA/G_T/G_IA
    valid_fraction: dict                  # element -> fraction, trimmed only
    partitions: dict                      # element -> CellPartition
    pieces: dict                          # element -> [CurvePiece]
    tangential_touches: list

    def group_counts(self) -> dict:
        return {name: int(np.sum(self.groups == g))
                for g, name in GROUP_NAMES.items()}


def classify_elements(mesh: Mesh2D, loops):
    """Element labels plus valid-area fractions of the trimmed elements.

    An element is trimmed when a curve chain passes through it or when its
    corners disagree; inactive when fully invalid or when its valid-area
    fraction falls below the sliver threshold; active-untrimmed otherwise.
    Returns ``(labels, fractions, partitions, pieces, touches)``.
    """
    rect = mesh.rect
    for loop in loops:
        loop.validate(rect)
    labels = np.full(mesh.n_ele, ACTIVE, dtype=int)
    fractions: dict[int, float] = {}
    partitions: dict[int, CellPartition] = {}
    if not loops:
        return labels, fractions, partitions, {}, []

    pieces, touches = split_into_pieces(loops, mesh)

    grid = np.stack(np.meshgrid(mesh.breaks_u, mesh.breaks_v, indexing="ij"),
                    axis=-1)
    node_valid = classify_points(
        loops, grid.reshape(-1, 2), rect).reshape(grid.shape[:2])

    all_valid = (node_valid[:-1, :-1] & node_valid[1:, :-1]
                 & node_valid[:-1, 1:] & node_valid[1:, 1:])
    any_valid = (node_valid[:-1, :-1] | node_valid[1:, :-1]
                 | node_valid[:-1, 1:] | node_valid[1:, 1:])
    for e in range(mesh.n_ele):
        i, j = mesh.unflat(e)
        if e in pieces or all_valid[i, j] != any_valid[i, j]:
            labels[e] = TRIMMED
        elif not any_valid[i, j]:
            labels[e] = INACTIVE

    for e, plist in pieces.items():
        part = partition_trimmed_element(mesh, e, plist, loops, rect)
        frac = part.valid_area / mesh.element_area(e)
        if frac < SLIVER_FRACTION:
            labels[e] = INACTIVE
            continue
        fractions[e] = frac
        partitions[e] = part
    # corner-disagreement elements without pieces: a chain merely touches
    # their boundary, so they are entirely valid or entirely invalid
    for e in np.flatnonzero(labels == TRIMMED):
        e = int(e)
        if e in fractions:
            continue
        eu0, eu1, ev0, ev1 = mesh.element_rect(e)
        if classify_point(loops, ((eu0 + eu1) / 2, (ev0 + ev1) / 2), rect):
            labels[e] = ACTIVE
        else:
            labels[e] = INACTIVE
    return labels, fractions, partitions, pieces, touches


def _element_spans(space: SplineSpace1D) -> np.ndarray:
    """Knot-span index of every non-zero element of a 1D space."""
    kv = space.kv
    breaks = space.breakpoints
    out = np.empty(space.n_ele, dtype=int)
    for e in range(space.n_ele):
        out[e] = kv.find_span(0.5 * (breaks[e] + breaks[e + 1]))
    return out


def classify_functions(space_u: SplineSpace1D, space_v: SplineSpace1D,
                       mesh: Mesh2D, element_labels: np.ndarray) -> np.ndarray:
    """Label every tensor-product basis function.

    Trimmed: the support contains a trimmed element, or mixes active and
    inactive elements.  Inactive: the whole support is inactive.  Untrimmed
    otherwise (support entirely inside active-untrimmed elements).
    """
    su, sv = _element_spans(space_u), _element_spans(space_v)
    lab2d = element_labels.reshape(mesh.n_v, mesh.n_u).T
    p, q = space_u.p, space_v.p
    n_fu, n_fv = space_u.n, space_v.n

    def rect_any(mask):
        c = np.zeros((mesh.n_u + 1, mesh.n_v + 1))
        c[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
        out = np.zeros((n_fu, n_fv), dtype=bool)
        for i in range(n_fu):
            e0 = np.searchsorted(su, i)
            e1 = np.searchsorted(su, i + p, side="right") - 1
            for j in range(n_fv):
                f0 = np.searchsorted(sv, j)
                f1 = np.searchsorted(sv, j + q, side="right") - 1
                s = (c[e1 + 1, f1 + 1] - c[e0, f1 + 1]
                     - c[e1 + 1, f0] + c[e0, f0])
                out[i, j] = s > 0
        return out

    any_t = rect_any(element_labels.reshape(mesh.n_v, mesh.n_u).T == TRIMMED)
    any_ia = rect_any(lab2d == INACTIVE)
    any_a = rect_any(lab2d == ACTIVE)
    labels = np.full((n_fu, n_fv), F_UNTRIMMED, dtype=int)
    labels[any_t | (any_ia & any_a)] = F_TRIMMED
    labels[~any_t & ~any_a] = F_INACTIVE
    return labels


def group_elements(space_u: SplineSpace1D, space_v: SplineSpace1D,
                   mesh: Mesh2D, element_labels: np.ndarray,
                   function_labels: np.ndarray) -> np.ndarray:
    """Four-group partition: patch-wise, transition, trimmed, inactive.

    Transition elements are active-untrimmed elements supporting at least
    one trimmed basis function; the remaining active-untrimmed elements are
    patch-wise.
    """
    su, sv = _element_spans(space_u), _element_spans(space_v)
    p, q = space_u.p, space_v.p
    trimmed_f = (function_labels == F_TRIMMED)
    c = np.zeros((function_labels.shape[0] + 1, function_labels.shape[1] + 1))
    c[1:, 1:] = np.cumsum(np.cumsum(trimmed_f, axis=0), axis=1)
    groups = np.empty(mesh.n_ele, dtype=int)
    for e in range(mesh.n_ele):
        i, j = mesh.unflat(e)
        if element_labels[e] == TRIMMED:
            groups[e] = G_T
        elif element_labels[e] == INACTIVE:
            groups[e] = G_IA
        else:
            i0, i1 = su[i] - p, su[i]
            j0, j1 = sv[j] - q, sv[j]
            s = (c[i1 + 1, j1 + 1] - c[i0, j1 + 1]
                 - c[i1 + 1, j0] + c[i0, j0])
            groups[e] = G_TRA if s > 0 else G_PW
    return groups


def classify_domain(patch_or_spaces, loops, mesh: Mesh2D | None = None
                    ) -> DomainClassification:
    """Full classification pipeline for a patch (or a pair of spaces)."""
    if hasattr(patch_or_spaces, "space_u"):
        space_u, space_v = patch_or_spaces.space_u, patch_or_spaces.space_v
    else:
        space_u, space_v = patch_or_spaces
    if mesh is None:
        mesh = Mesh2D.from_spaces(space_u, space_v)
    labels, fractions, partitions, pieces, touches = classify_elements(
        mesh, loops)
    function_labels = classify_functions(space_u, space_v, mesh, labels)
    groups = group_elements(space_u, space_v, mesh, labels, function_labels)
    return DomainClassification(
        mesh=mesh, element_labels=labels, function_labels=function_labels,
        groups=groups, valid_fraction=fractions, partitions=partitions,
        pieces=pieces, tangential_touches=touches)
