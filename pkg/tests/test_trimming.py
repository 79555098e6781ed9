"""Point/element/function classification, cell partition, blending map."""

import numpy as np
import pytest

from conftest import full_circle, hole_loop, quarter_arc
from trimquad.errors import UnsupportedTrimTopology
from trimquad.oracle import greens_area
from trimquad.splines import Mesh2D, uniform_space
from trimquad.trimming import (
    ACTIVE,
    BlendCell,
    F_INACTIVE,
    F_TRIMMED,
    F_UNTRIMMED,
    G_IA,
    G_PW,
    G_T,
    G_TRA,
    INACTIVE,
    TRIMMED,
    TrimLoop,
    classify_domain,
    classify_elements,
    classify_functions,
    classify_point,
    classify_points,
    group_elements,
    intersect_with_gridlines,
    map_gauss_to_cell,
    partition_trimmed_element,
    split_into_pieces,
)

PUNCHED_RECT = (0.0, 12.5, 0.0, 10.0)


def winding_oracle(polys, pts):
    """Independent even-odd crossing test against dense polygons."""
    pts = np.atleast_2d(pts)
    inside = np.zeros(pts.shape[0], dtype=bool)
    for poly in polys:
        x0, y0 = poly[:-1, 0], poly[:-1, 1]
        x1, y1 = poly[1:, 0], poly[1:, 1]
        cross = np.zeros(pts.shape[0], dtype=int)
        for k in range(x0.size):
            cond = (y0[k] > pts[:, 1]) != (y1[k] > pts[:, 1])
            xin = x0[k] + (pts[:, 1] - y0[k]) / (y1[k] - y0[k] + 1e-300) \
                * (x1[k] - x0[k])
            cross += cond & (pts[:, 0] < xin)
        inside |= (cross % 2).astype(bool)
    return inside


def dense_loop_polygon(loop, rect, n_per_seg=4000):
    from trimquad.trimming import boundary_walk_ccw

    pts = []
    for curve in loop.segments:
        t0, t1 = curve.domain
        pts.append(curve.points(np.linspace(t0, t1, n_per_seg)))
    poly = np.vstack(pts)
    if not loop.is_closed(rect):
        extent = max(rect[1] - rect[0], rect[3] - rect[2])
        walk = boundary_walk_ccw(rect, poly[-1], poly[0], 1e-10 * extent)
        poly = np.vstack([poly] + [w[None, :] for w in walk] + [poly[:1]])
    elif np.linalg.norm(poly[0] - poly[-1]) > 0:
        poly = np.vstack([poly, poly[:1]])
    return poly


class TestClassifyPoint:
    def test_punched_circle_center_is_invalid(self):
        loops = [hole_loop(2.5, 2.5, 0.5)]
        assert not classify_point(loops, (2.5, 2.5), PUNCHED_RECT)

    def test_far_corner_is_valid(self):
        loops = [hole_loop(2.5, 2.5, 0.5)]
        assert classify_point(loops, (0.1, 0.1), PUNCHED_RECT)

    def test_matches_polygon_oracle_away_from_curve(self, rng):
        rect = (0.0, 4.0, 0.0, 4.0)
        loops = [TrimLoop([quarter_arc(1.0)], keep="outside"),
                 hole_loop(2.5, 2.5, 0.7)]
        pts = np.column_stack([rng.uniform(0, 4, 100000),
                               rng.uniform(0, 4, 100000)])
        polys = [dense_loop_polygon(lp, rect) for lp in loops]
        # exclude the band around the curves where flattening may disagree
        dist1 = np.abs(np.hypot(pts[:, 0], pts[:, 1]) - 1.0)
        dist2 = np.abs(np.hypot(pts[:, 0] - 2.5, pts[:, 1] - 2.5) - 0.7)
        keep = (dist1 > 1e-7) & (dist2 > 1e-7)
        mine = classify_points(loops, pts[keep], rect)
        oracle = ~winding_oracle(polys, pts[keep])
        assert np.array_equal(mine, oracle)


class TestGridlineIntersections:
    def test_diagonal_segment(self):
        from trimquad.splines import NurbsCurve2D

        seg = NurbsCurve2D(uniform_space(1, 1),
                           np.array([[0.1, 0.1], [1.9, 1.9]]),
                           np.ones(2))
        mesh = Mesh2D.from_spaces(uniform_space(1, 2, 0, 2),
                                  uniform_space(1, 2, 0, 2))
        crossings = [c for c in intersect_with_gridlines(seg, mesh)
                     if not c.tangential]
        assert len(crossings) == 2

    def test_circle_against_centre_lines(self):
        circle = full_circle(2.5, 2.5, 0.5)
        mesh = Mesh2D.from_spaces(uniform_space(1, 2, 0, 5),
                                  uniform_space(1, 2, 0, 5))
        crossings = [c for c in intersect_with_gridlines(circle, mesh)
                     if not c.tangential]
        assert len(crossings) == 4

    def test_crossing_residuals(self, rng):
        circle = full_circle(2.0, 2.0, 0.9)
        mesh = Mesh2D.from_spaces(uniform_space(2, 8, 0, 4),
                                  uniform_space(2, 8, 0, 4))
        crossings = intersect_with_gridlines(circle, mesh)
        assert crossings
        for c in crossings:
            if not c.tangential:
                assert abs(circle.point(c.t)[c.axis] - c.value) < 1e-12 * 4


class TestClassifyElements:
    def test_untrimmed_patch_is_all_active(self):
        mesh = Mesh2D.from_spaces(uniform_space(2, 4), uniform_space(2, 4))
        labels, fr, parts, pieces, touches = classify_elements(mesh, [])
        assert np.all(labels == ACTIVE) and not fr and not parts

    def test_against_dense_sampling_oracle(self, rng):
        n = 16
        su = uniform_space(2, n, 0, 4)
        mesh = Mesh2D.from_spaces(su, su)
        loops = [TrimLoop([quarter_arc(1.0)], keep="outside")]
        labels, *_ = classify_elements(mesh, loops)
        xs = (np.arange(32) + 0.5) / 32
        for e in range(mesh.n_ele):
            u0, u1, v0, v1 = mesh.element_rect(e)
            uu, vv = np.meshgrid(u0 + xs * (u1 - u0), v0 + xs * (v1 - v0))
            ok = classify_points(loops, np.column_stack([uu.ravel(), vv.ravel()]),
                                 mesh.rect)
            if ok.all():
                assert labels[e] == ACTIVE
            elif not ok.any():
                assert labels[e] == INACTIVE
            else:
                assert labels[e] == TRIMMED

    def test_inactive_fraction_approaches_hole_fraction(self):
        # the quarter hole covers pi/64 of the patch
        fractions = []
        for n in (16, 32, 64):
            su = uniform_space(2, n, 0, 4)
            mesh = Mesh2D.from_spaces(su, su)
            labels, *_ = classify_elements(
                mesh, [TrimLoop([quarter_arc(1.0)], keep="outside")])
            fractions.append(np.mean(labels == INACTIVE))
        hole = np.pi / 64
        assert fractions[-1] <= hole
        assert fractions[-1] > fractions[0]
        assert hole - fractions[-1] < 0.02


class TestClassifyFunctions:
    def setup_case(self, n=8, p=2):
        su = uniform_space(p, n, 0, 4)
        mesh = Mesh2D.from_spaces(su, su)
        loops = [TrimLoop([quarter_arc(1.0)], keep="outside")]
        labels, *_ = classify_elements(mesh, loops)
        return su, mesh, labels

    def test_untrimmed_patch(self):
        su = uniform_space(2, 4)
        mesh = Mesh2D.from_spaces(su, su)
        labels = np.full(mesh.n_ele, ACTIVE)
        flabels = classify_functions(su, su, mesh, labels)
        assert np.all(flabels == F_UNTRIMMED)

    def test_support_rules(self):
        su, mesh, labels = self.setup_case()
        flabels = classify_functions(su, su, mesh, labels)
        lab2d = labels.reshape(mesh.n_v, mesh.n_u).T
        p = su.p
        from trimquad.trimming import _element_spans

        spans = _element_spans(su)
        for i in range(su.n):
            e0, e1 = np.searchsorted(spans, i), \
                np.searchsorted(spans, i + p, side="right") - 1
            for j in range(su.n):
                f0, f1 = np.searchsorted(spans, j), \
                    np.searchsorted(spans, j + p, side="right") - 1
                sup = lab2d[e0:e1 + 1, f0:f1 + 1]
                if (sup == TRIMMED).any() or ((sup == INACTIVE).any()
                                              and (sup == ACTIVE).any()):
                    assert flabels[i, j] == F_TRIMMED
                elif (sup == INACTIVE).all():
                    assert flabels[i, j] == F_INACTIVE
                else:
                    assert flabels[i, j] == F_UNTRIMMED

    def test_untrimmed_support_avoids_trimmed_and_inactive(self):
        su, mesh, labels = self.setup_case(n=12)
        flabels = classify_functions(su, su, mesh, labels)
        dc = classify_domain((su, su), [TrimLoop([quarter_arc(1.0)],
                                                 keep="outside")], mesh)
        lab2d = labels.reshape(mesh.n_v, mesh.n_u).T
        from trimquad.trimming import _element_spans

        spans = _element_spans(su)
        for i, j in np.argwhere(flabels == F_UNTRIMMED):
            e0, e1 = np.searchsorted(spans, i), \
                np.searchsorted(spans, i + su.p, side="right") - 1
            f0, f1 = np.searchsorted(spans, j), \
                np.searchsorted(spans, j + su.p, side="right") - 1
            sup = lab2d[e0:e1 + 1, f0:f1 + 1]
            assert not (sup == TRIMMED).any()
            assert not (sup == INACTIVE).any()


class TestGroupElements:
    def test_untrimmed_patch_is_all_patchwise(self):
        su = uniform_space(2, 4)
        mesh = Mesh2D.from_spaces(su, su)
        dc = classify_domain((su, su), [], mesh)
        assert np.all(dc.groups == G_PW)

    def test_partition_and_band_width(self):
        for p in (2, 3):
            su = uniform_space(p, 12, 0, 4)
            mesh = Mesh2D.from_spaces(su, su)
            dc = classify_domain((su, su),
                                 [TrimLoop([quarter_arc(1.0)], keep="outside")],
                                 mesh)
            counts = dc.group_counts()
            assert sum(counts.values()) == mesh.n_ele
            # transition elements lie at most p elements from a trimmed one
            tset = {divmod(int(e), mesh.n_u)[::-1]
                    for e in np.flatnonzero(dc.groups == G_T)}
            for e in np.flatnonzero(dc.groups == G_TRA):
                i, j = mesh.unflat(int(e))
                dist = min(max(abs(i - ti), abs(j - tj)) for ti, tj in tset)
                assert dist <= p

    def test_higher_degree_widens_transition_band(self):
        bands = {}
        for p in (3, 5):
            su = uniform_space(p, 16, 0, 4)
            mesh = Mesh2D.from_spaces(su, su)
            dc = classify_domain((su, su),
                                 [TrimLoop([quarter_arc(1.0)], keep="outside")],
                                 mesh)
            bands[p] = int(np.sum(dc.groups == G_TRA))
        assert bands[5] > bands[3]


class TestCellPartition:
    def make_case(self, n=8, loops=None):
        su = uniform_space(2, n, 0, 4)
        mesh = Mesh2D.from_spaces(su, su)
        if loops is None:
            loops = [TrimLoop([quarter_arc(1.0)], keep="outside")]
        pieces, _ = split_into_pieces(loops, mesh)
        return mesh, loops, pieces

    def test_simple_crossing_cell_counts(self):
        mesh, loops, pieces = self.make_case(n=8)
        for e, plist in pieces.items():
            part = partition_trimmed_element(mesh, e, plist, loops, mesh.rect)
            assert 1 <= len(part.cells) <= 3

    def test_corner_cut_single_cell(self):
        # at a 4x4 mesh the arc runs corner to corner of element (0, 0)
        mesh, loops, pieces = self.make_case(n=4)
        part = partition_trimmed_element(mesh, 0, pieces[0], loops, mesh.rect)
        assert len(part.cells) == 1
        cell = part.cells[0]
        assert np.allclose(cell.b0, cell.b1)  # collapsed: triangle-like

    def test_cell_areas_cover_valid_region(self):
        mesh, loops, pieces = self.make_case(n=16)
        total_trimmed = 0.0
        for e, plist in pieces.items():
            part = partition_trimmed_element(mesh, e, plist, loops, mesh.rect)
            total_trimmed += part.valid_area
        labels, *_ = classify_elements(mesh, loops)
        active_area = np.sum(labels == ACTIVE) * mesh.element_area(0)
        exact = greens_area(loops, mesh.rect)
        assert abs(active_area + total_trimmed - exact) < 1e-9 * exact

    def test_loop_inside_one_element_rejected(self):
        loops = [hole_loop(2.0, 2.0, 0.3)]
        su = uniform_space(1, 2, 0, 4)
        mesh = Mesh2D.from_spaces(su, su)
        pieces, _ = split_into_pieces(loops, mesh)
        with pytest.raises(UnsupportedTrimTopology):
            for e, plist in pieces.items():
                partition_trimmed_element(mesh, e, plist, loops, mesh.rect)


class TestMappedGauss:
    def test_straight_cell_weights_sum_to_area(self):
        cell = BlendCell(np.array([0.0, 0.0]), np.array([2.0, 0.0]),
                         None, 0.0, 1.0,
                         top0=np.array([0.0, 1.0]), top1=np.array([2.0, 1.0]))
        pts, w = map_gauss_to_cell(cell, 2, 2)
        assert abs(w.sum() - 2.0) < 1e-14

    def test_point_count_rule(self):
        cell = BlendCell(np.array([0.0, 0.0]), np.array([1.0, 0.0]),
                         None, 0.0, 1.0,
                         top0=np.array([0.0, 1.0]), top1=np.array([1.0, 1.0]))
        for p in (2, 3, 4):
            pts, w = map_gauss_to_cell(cell, p, p)
            assert pts.shape[0] == (p + 1) ** 2

    def test_curve_degree_drives_count(self):
        arc = quarter_arc(1.0)
        cell = BlendCell(np.array([1.5, 0.0]), np.array([0.0, 1.5]),
                         arc, 0.0, 1.0)
        pts, w = map_gauss_to_cell(cell, 1, 1)
        assert pts.shape[0] == 9  # max(1, 1, curve degree 2) + 1 squared

    def test_quarter_circle_cell_area_converges(self):
        # valid region of the corner element containing the arc
        errors = []
        for n in (8, 16, 32):
            su = uniform_space(2, n, 0, 4)
            mesh = Mesh2D.from_spaces(su, su)
            loops = [TrimLoop([quarter_arc(1.0)], keep="outside")]
            pieces, _ = split_into_pieces(loops, mesh)
            err = 0.0
            for e, plist in pieces.items():
                part = partition_trimmed_element(mesh, e, plist, loops,
                                                 mesh.rect)
                mapped = sum(map_gauss_to_cell(c, 2, 2)[1].sum()
                             for c in part.cells)
                err = max(err, abs(mapped - part.valid_area))
            errors.append(err)
        assert errors[-1] < 1e-8
        assert errors[-1] < errors[0]


class TestInvariants:
    def test_zero_outside_for_untrimmed_pairs(self, rng):
        su = uniform_space(2, 8, 0, 4)
        mesh = Mesh2D.from_spaces(su, su)
        loops = [TrimLoop([quarter_arc(1.0)], keep="outside")]
        dc = classify_domain((su, su), loops, mesh)
        from trimquad.splines import eval_basis

        untrimmed = np.argwhere(dc.function_labels == F_UNTRIMMED)
        dead = np.flatnonzero((dc.groups == G_T) | (dc.groups == G_IA))
        for e in dead:
            u0, u1, v0, v1 = mesh.element_rect(int(e))
            for _ in range(5):
                u = rng.uniform(u0, u1)
                v = rng.uniform(v0, v1)
                bu = eval_basis(su, u)
                bv = eval_basis(su, v)
                vals = np.zeros((su.n, su.n))
                vals[bu.first:bu.first + 3, bv.first:bv.first + 3] = \
                    np.outer(bu.values[0], bv.values[0])
                for i, j in untrimmed[:: max(1, len(untrimmed) // 10)]:
                    assert abs(vals[i, j]) < 1e-14

    def test_orientation_invariance_open_loop(self):
        su = uniform_space(2, 8, 0, 4)
        mesh = Mesh2D.from_spaces(su, su)
        fwd = [TrimLoop([quarter_arc(1.0)], keep="outside")]
        rev = [TrimLoop([quarter_arc(1.0)], keep="outside").reversed()]
        rev[0].keep = "inside"
        d1 = classify_domain((su, su), fwd, mesh)
        d2 = classify_domain((su, su), rev, mesh)
        assert np.array_equal(d1.groups, d2.groups)
        assert np.array_equal(d1.function_labels, d2.function_labels)

    def test_closed_loop_reversal_invariance(self):
        su = uniform_space(2, 8, 0, 4)
        mesh = Mesh2D.from_spaces(su, su)
        fwd = [hole_loop(2.0, 2.0, 0.9)]
        rev = [fwd[0].reversed()]
        d1 = classify_domain((su, su), fwd, mesh)
        d2 = classify_domain((su, su), rev, mesh)
        assert np.array_equal(d1.groups, d2.groups)

    def test_refinement_monotonicity(self):
        loops = [TrimLoop([quarter_arc(1.0)], keep="outside")]
        cut_frac, ia_frac = [], []
        for n in (8, 16, 32, 64):
            su = uniform_space(2, n, 0, 4)
            mesh = Mesh2D.from_spaces(su, su)
            dc = classify_domain((su, su), loops, mesh)
            counts = dc.group_counts()
            cut_frac.append((counts["t"] + counts["tra"]) / mesh.n_ele)
            ia_frac.append(counts["ia"] / mesh.n_ele)
        assert all(a > b for a, b in zip(cut_frac[:-1], cut_frac[1:]))
        hole = np.pi / 64
        assert abs(ia_frac[-1] - hole) < abs(ia_frac[0] - hole)
