"""Independent brute-force references for the test suite.

Nothing in the production modules imports this one; the dependency points
the other way only.  These paths trade speed for simplicity and serve as
oracles for integration, areas and the reference elastic energy of the
plane benchmark with an exact stress field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import QuadRule1D
from .splines import SplineSpace1D, eval_basis_many, exact_integrals
from .trimming import TrimLoop, boundary_walk_ccw, classify_points


@dataclass(frozen=True)
class AdaptiveCellResult:
    """Outcome of a quadtree integration over a trimmed region."""

    value: float
    tol_achieved: float
    cell_count: int
    max_depth_reached: int
    converged: bool


def adaptive_integrate(f, region_rect, loops, patch_rect, rel_tol: float,
                       max_depth: int = 12) -> AdaptiveCellResult:
    """Quadtree integration of ``f`` over the valid part of a rectangle.

    Cut cells are subdivided until two successive refinement levels agree
    to ``rel_tol`` or the depth cap is reached; each leaf uses a 2x2 Gauss
    rule, restricted to valid sample points on cut leaves at the last
    level.  ``f`` maps an (N, 2) array of parametric points to (N,) values.
    """
    if rel_tol < 1e-12:
        raise ValueError("rel_tol must be at least 1e-12")
    gx, gw = np.polynomial.legendre.leggauss(2)

    def gauss_cells(cells):
        """Gauss points, weights for a batch of cells."""
        cells = np.asarray(cells, dtype=float)
        hx = 0.5 * (cells[:, 1] - cells[:, 0])
        hy = 0.5 * (cells[:, 3] - cells[:, 2])
        mx = 0.5 * (cells[:, 1] + cells[:, 0])
        my = 0.5 * (cells[:, 3] + cells[:, 2])
        pts = np.empty((cells.shape[0], 4, 2))
        wts = np.empty((cells.shape[0], 4))
        k = 0
        for a in range(2):
            for b in range(2):
                pts[:, k, 0] = mx + hx * gx[a]
                pts[:, k, 1] = my + hy * gx[b]
                wts[:, k] = hx * hy * gw[a] * gw[b]
                k += 1
        return pts, wts

    def probe_status(cells):
        """3x3 probe: 1 fully valid, 0 fully invalid, -1 cut."""
        cells = np.asarray(cells, dtype=float)
        fr = np.linspace(0.0, 1.0, 3)
        pts = np.empty((cells.shape[0], 9, 2))
        k = 0
        for a in fr:
            for b in fr:
                pts[:, k, 0] = cells[:, 0] + a * (cells[:, 1] - cells[:, 0])
                pts[:, k, 1] = cells[:, 2] + b * (cells[:, 3] - cells[:, 2])
                k += 1
        valid = classify_points(loops, pts.reshape(-1, 2), patch_rect)
        valid = valid.reshape(cells.shape[0], 9)
        out = np.full(cells.shape[0], -1, dtype=int)
        out[valid.all(axis=1)] = 1
        out[~valid.any(axis=1)] = 0
        return out

    def cut_value(cells):
        pts, wts = gauss_cells(cells)
        vals = f(pts.reshape(-1, 2)).reshape(wts.shape)
        ok = classify_points(loops, pts.reshape(-1, 2),
                             patch_rect).reshape(wts.shape)
        return float(np.sum(wts * vals * ok))

    solid = 0.0
    cut = [tuple(region_rect)]
    prev = None
    cell_count = 1
    depth = 0
    converged = False
    tol_ach = np.inf
    while True:
        status = probe_status(cut)
        keep = []
        for c, st in zip(cut, status):
            if st == 1:
                pts, wts = gauss_cells([c])
                solid += float(np.sum(wts * f(pts.reshape(-1, 2))))
            elif st == -1:
                keep.append(c)
        cut = keep
        cell_count += len(cut)
        value = solid + (cut_value(cut) if cut else 0.0)
        if prev is not None:
            tol_ach = abs(value - prev) / max(abs(value), 1e-300)
            if tol_ach < rel_tol or not cut:
                converged = True
                break
        if depth >= max_depth:
            break
        prev = value
        nxt = []
        for u0, u1, v0, v1 in cut:
            um, vm = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
            nxt += [(u0, um, v0, vm), (um, u1, v0, vm),
                    (u0, um, vm, v1), (um, u1, vm, v1)]
        cut = nxt
        depth += 1
    return AdaptiveCellResult(value=float(value), tol_achieved=float(tol_ach),
                              cell_count=cell_count, max_depth_reached=depth,
                              converged=converged)


def _loop_enclosed_area(loop: TrimLoop, rect) -> float:
    """Unsigned area enclosed by a loop (boundary-closed when open)."""
    xg, wg = np.polynomial.legendre.leggauss(16)
    total = 0.0
    for curve in loop.segments:
        breaks = curve.space.breakpoints
        for a, b in zip(breaks[:-1], breaks[1:]):
            ts = 0.5 * (a + b) + 0.5 * (b - a) * xg
            for t, w in zip(ts, wg):
                c, dc = curve.derivatives(float(t), 1)
                total += 0.5 * (c[0] * dc[1] - c[1] * dc[0]) * w * 0.5 * (b - a)
    start, end = loop.endpoints()
    if not loop.is_closed(rect):
        extent = max(rect[1] - rect[0], rect[3] - rect[2])
        verts = [end] + boundary_walk_ccw(rect, end, start, 1e-10 * extent) \
            + [start]
        for pa, pb in zip(verts[:-1], verts[1:]):
            total += 0.5 * (pa[0] * pb[1] - pb[0] * pa[1])
    return abs(total)


def greens_area(loops, rect) -> float:
    """Valid area of the trimmed rectangle by boundary line integrals.

    Keep-outside loops subtract their enclosed area from the rectangle (or
    from the keep-inside region when one is present); keep-inside loops
    define the retained region directly.
    """
    u0, u1, v0, v1 = rect
    inside_loops = [lp for lp in loops if lp.keep == "inside"]
    outside_loops = [lp for lp in loops if lp.keep == "outside"]
    for loop in loops:
        loop.validate(rect)
    base = sum(_loop_enclosed_area(lp, rect) for lp in inside_loops) \
        if inside_loops else (u1 - u0) * (v1 - v0)
    return float(base - sum(_loop_enclosed_area(lp, rect)
                            for lp in outside_loops))


def rule_residual(rule: QuadRule1D, space: SplineSpace1D) -> float:
    """Worst basis-function integration error, relative to domain length."""
    a, b = space.domain
    first, vals = eval_basis_many(space, rule.points, 0)
    acc = np.zeros(space.n)
    for k in range(rule.count):
        sl = slice(first[k], first[k] + space.p + 1)
        acc[sl] += rule.weights[k] * vals[k, 0]
    return float(np.abs(acc - exact_integrals(space)).max() / (b - a))


def kirsch_stress_polar(r, theta, tx, hole_r):
    """Stresses of a uniaxially loaded infinite plate with a circular hole."""
    c2 = np.cos(2.0 * theta)
    s2 = np.sin(2.0 * theta)
    rho2 = (hole_r / r) ** 2
    rho4 = rho2 ** 2
    srr = 0.5 * tx * (1 - rho2) + 0.5 * tx * (1 - 4 * rho2 + 3 * rho4) * c2
    stt = 0.5 * tx * (1 + rho2) - 0.5 * tx * (1 + 3 * rho4) * c2
    srt = -0.5 * tx * (1 + 2 * rho2 - 3 * rho4) * s2
    return srr, stt, srt


def kirsch_energy(material, tx: float, hole_r: float, side: float,
                  rel_tol: float = 1e-10) -> float:
    """Elastic energy of the quarter plate with the exact hole-field stresses.

    Integrates the strain-energy density over the trimmed quarter domain in
    polar coordinates, where both the hole rim and (after splitting the
    angle at pi/4) the outer square edges are coordinate lines; the Gauss
    order doubles until two successive values agree to ``rel_tol``.
    """
    if rel_tol < 1e-12:
        raise ValueError("rel_tol must be at least 1e-12")
    e_mod, nu = material.E, material.nu
    plane_strain = material.mode == "plane_strain"

    def energy(order):
        xg, wg = np.polynomial.legendre.leggauss(order)
        total = 0.0
        for th_lo, th_hi, r_of in (
            (0.0, np.pi / 4, lambda t: side / np.cos(t)),
            (np.pi / 4, np.pi / 2, lambda t: side / np.sin(t)),
        ):
            th = 0.5 * (th_lo + th_hi) + 0.5 * (th_hi - th_lo) * xg
            wth = 0.5 * (th_hi - th_lo) * wg
            for t, wt in zip(th, wth):
                rmax = r_of(t)
                r = 0.5 * (hole_r + rmax) + 0.5 * (rmax - hole_r) * xg
                wr = 0.5 * (rmax - hole_r) * wg
                srr, stt, srt = kirsch_stress_polar(r, t, tx, hole_r)
                if plane_strain:
                    err = ((1 - nu ** 2) * srr - nu * (1 + nu) * stt) / e_mod
                    ett = ((1 - nu ** 2) * stt - nu * (1 + nu) * srr) / e_mod
                else:
                    err = (srr - nu * stt) / e_mod
                    ett = (stt - nu * srr) / e_mod
                grt = 2.0 * (1 + nu) / e_mod * srt
                dens = 0.5 * (srr * err + stt * ett + srt * grt)
                total += wt * np.sum(wr * dens * r)
        return total

    order = 16
    prev = energy(order)
    while order <= 512:
        order *= 2
        cur = energy(order)
        if abs(cur - prev) <= rel_tol * abs(cur):
            return float(cur)
        prev = cur
    return float(prev)
