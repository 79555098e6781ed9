"""Shared helpers for the test suite."""

import numpy as np
import pytest

from trimquad.splines import (
    KnotVector,
    NurbsCurve2D,
    SplineSpace1D,
    make_open_knots,
    uniform_space,
)
from trimquad.trimming import TrimLoop

SQRT2_INV = 1.0 / np.sqrt(2.0)


def random_open_space(rng, p=None, max_elements=64, max_mult=None,
                      min_gap=1e-3):
    """Random open-knot spline space with mixed interior multiplicities."""
    if p is None:
        p = int(rng.integers(1, 6))
    n_ele = int(rng.integers(1, max_elements + 1))
    breaks = np.sort(rng.random(n_ele - 1)) if n_ele > 1 else np.empty(0)
    breaks = np.concatenate([[0.0], breaks, [1.0]])
    keep = np.concatenate([[True], np.diff(breaks) > min_gap])
    breaks = breaks[keep]
    if max_mult is None:
        max_mult = p + 1
    mults = rng.integers(1, max_mult + 1, size=len(breaks) - 2)
    return SplineSpace1D(make_open_knots(p, breaks, mults))


def random_solution_space(rng, element_type):
    """Random solution space compatible with a patch-wise target.

    Plane targets need interior regularity >= 1 (multiplicity <= p-1) and
    plate targets >= 2, otherwise the doubled-degree target space loses
    integrability of the optimal point count.
    """
    if element_type == "plane":
        p = int(rng.integers(2, 6))
        max_mult = max(p - 1, 1)
    else:
        p = int(rng.integers(3, 6))
        max_mult = max(p - 2, 1)
    return random_open_space(rng, p=p, max_mult=max_mult)


def quarter_arc(radius=1.0):
    """Exact quarter-circle arc centred at the origin, (r,0) to (0,r)."""
    space = uniform_space(2, 1)
    cp = np.array([[radius, 0.0], [radius, radius], [0.0, radius]])
    return NurbsCurve2D(space, cp, np.array([1.0, SQRT2_INV, 1.0]))


def full_circle(cx, cy, r):
    """Exact circle from four rational quadratic arcs."""
    kv = KnotVector(np.array(
        [0, 0, 0, .25, .25, .5, .5, .75, .75, 1, 1, 1], dtype=float), 2)
    s = SQRT2_INV
    cp = np.array([[cx + r, cy], [cx + r, cy - r], [cx, cy - r],
                   [cx - r, cy - r], [cx - r, cy], [cx - r, cy + r],
                   [cx, cy + r], [cx + r, cy + r], [cx + r, cy]])
    w = np.array([1, s, 1, s, 1, s, 1, s, 1.0])
    return NurbsCurve2D(SplineSpace1D(kv), cp, w)


def hole_loop(cx, cy, r):
    return TrimLoop([full_circle(cx, cy, r)], keep="outside")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
