"""Spline spaces, basis evaluation, NURBS curves and patches."""

import numpy as np
import pytest

from conftest import quarter_arc, random_open_space
from trimquad.errors import (
    InvalidRefinementError,
    OutOfDomainError,
    UnsupportedContinuityError,
)
from trimquad.quadrature import gauss_on_interval
from trimquad.splines import (
    KnotVector,
    SplineSpace1D,
    eval_basis,
    eval_basis_many,
    exact_integrals,
    find_span,
    greville_abscissae,
    insert_knot,
    make_open_knots,
    rectangle_patch,
    target_space,
    uniform_space,
)


def space_from(knots, p):
    return SplineSpace1D(KnotVector(np.asarray(knots, dtype=float), p))


class TestFindSpan:
    kv = KnotVector(np.array([0, 0, 0, 0.5, 1, 1, 1.0]), 2)

    def test_interior(self):
        assert find_span(self.kv, 0.25) == 2

    def test_right_endpoint_maps_to_last_nonzero_span(self):
        assert find_span(self.kv, 1.0) == 3

    def test_outside_domain_raises(self):
        with pytest.raises(OutOfDomainError):
            find_span(self.kv, 1.5)


class TestEvalBasis:
    def test_linear_hats(self):
        s = space_from([0, 0, 1, 1], 1)
        be = eval_basis(s, 0.3)
        assert np.allclose(be.values[0], [0.7, 0.3])

    def test_bernstein_midpoint(self):
        s = space_from([0, 0, 0, 1, 1, 1], 2)
        be = eval_basis(s, 0.5)
        assert np.allclose(be.values[0], [0.25, 0.5, 0.25])

    def test_exactly_p_plus_one_records(self, rng):
        for _ in range(5):
            s = random_open_space(rng, max_elements=8)
            x = rng.uniform(*s.domain)
            be = eval_basis(s, x, 2)
            assert be.values.shape == (3, s.p + 1)

    @pytest.mark.parametrize("order", [1, 2])
    def test_derivatives_match_finite_differences(self, rng, order):
        h = 1e-6
        for _ in range(8):
            s = random_open_space(rng, max_elements=10)
            if s.p < order:
                continue
            a, b = s.domain
            breaks = s.breakpoints
            xs = rng.uniform(a + 2 * h, b - 2 * h, size=40)
            # keep clear of the knots where derivatives may jump
            xs = xs[np.min(np.abs(xs[:, None] - breaks[None, :]), axis=1) > 100 * h]
            for x in xs[:10]:
                be = eval_basis(s, float(x), order)
                # difference values for order 1 and first derivatives for
                # order 2; the plain second difference at this step is
                # dominated by double-precision roundoff
                lo = eval_basis(s, float(x) - h, order - 1)
                hi = eval_basis(s, float(x) + h, order - 1)
                fd = (hi.values[order - 1] - lo.values[order - 1]) / (2 * h)
                assert lo.first == be.first == hi.first
                scale = max(np.abs(be.values[order]).max(), 1.0)
                assert np.abs(be.values[order] - fd).max() < 1e-5 * scale


class TestPartitionOfUnity:
    def test_values_sum_to_one_and_derivatives_to_zero(self, rng):
        for _ in range(5):
            s = random_open_space(rng, max_elements=16)
            xs = rng.uniform(*s.domain, size=1000)
            _, vals = eval_basis_many(s, xs, 1)
            assert np.abs(vals[:, 0, :].sum(axis=1) - 1).max() < 1e-12
            width = np.diff(s.breakpoints).min()
            assert np.abs(vals[:, 1, :].sum(axis=1)).max() * width < 1e-9


class TestDimensionFormulas:
    def test_count_from_knot_vector_size(self, rng):
        for _ in range(40):
            s = random_open_space(rng)
            assert s.n == s.kv.m - s.p - 1

    def test_uniform_regularity_count(self, rng):
        for _ in range(40):
            p = int(rng.integers(1, 6))
            n_ele = int(rng.integers(1, 65))
            r = int(rng.integers(0, p))
            s = uniform_space(p, n_ele, regularity=r)
            assert s.n == (p + 1) * n_ele - (r + 1) * (n_ele - 1)


class TestSurfaceEvaluation:
    def test_unit_weights_match_tensor_bsplines(self, rng):
        patch = rectangle_patch(2.0, 3.0, p=2, n_u=3)
        for _ in range(20):
            u = rng.uniform(0, 2)
            v = rng.uniform(0, 3)
            ev = patch.evaluate(u, v, 1)
            bu = eval_basis(patch.space_u, u)
            bv = eval_basis(patch.space_v, v)
            assert np.allclose(ev.basis, np.outer(bu.values[0], bv.values[0]),
                               atol=1e-14)

    def test_identity_patch_has_unit_jacobian(self, rng):
        patch = rectangle_patch(1.0, 1.0, p=3, n_u=4)
        for _ in range(10):
            ev = patch.evaluate(rng.uniform(0, 1), rng.uniform(0, 1), 1)
            assert abs(np.linalg.det(ev.jacobian) - 1.0) < 1e-12

    def test_rational_partition_of_unity(self, rng):
        # skewed weights still sum to one
        patch = rectangle_patch(1.0, 1.0, p=2, n_u=2)
        w = patch.weights.copy()
        w[1, 1] = 3.0
        from trimquad.splines import NurbsSurfacePatch

        patch = NurbsSurfacePatch(patch.space_u, patch.space_v,
                                  patch.control_points, w)
        for _ in range(200):
            ev = patch.evaluate(rng.uniform(0, 1), rng.uniform(0, 1), 0)
            assert abs(ev.basis.sum() - 1.0) < 1e-12

    def test_quarter_arc_stays_on_circle(self):
        arc = quarter_arc(1.0)
        pts = arc.points(np.linspace(0, 1, 11))
        assert np.abs(np.linalg.norm(pts, axis=1) - 1.0).max() < 1e-12


class TestTargetSpace:
    def test_plane_example_dimension(self):
        s = space_from([0, 0, 0, 0.5, 1, 1, 1], 2)
        t = target_space(s, "plane")
        assert t.p == 4 and t.n == 9
        breaks, mults = t.kv.breakpoints_and_multiplicities()
        assert mults[1] == 4  # regularity 0 at the interior knot

    def test_plate_example_dimension(self):
        s = space_from([0, 0, 0, 0, 1 / 3, 2 / 3, 1, 1, 1, 1], 3)
        t = target_space(s, "kl_plate")
        assert t.p == 6 and t.n == 19

    def test_single_element_bernstein(self):
        s = space_from([0, 0, 0, 1, 1, 1], 2)
        t = target_space(s, "plane")
        assert t.n == 5 and t.n_ele == 1

    def test_low_continuity_plate_rejected(self):
        s = space_from([0, 0, 0, 0, .5, .5, 1, 1, 1, 1], 3)  # C1 knot
        with pytest.raises(UnsupportedContinuityError):
            target_space(s, "kl_plate")

    @pytest.mark.parametrize("element_type", ["plane", "kl_plate"])
    def test_contains_integrand_products(self, rng, element_type):
        order = 1 if element_type == "plane" else 2
        for _ in range(4):
            if element_type == "plane":
                s = random_open_space(rng, p=int(rng.integers(2, 5)),
                                      max_elements=6, max_mult=1)
            else:
                s = random_open_space(rng, p=int(rng.integers(3, 5)),
                                      max_elements=6, max_mult=1)
            t = target_space(s, element_type)
            a, b = s.domain
            xs = np.linspace(a, b, 40 * t.n)[1:-1]
            _, sv = eval_basis_many(s, xs, order)
            _, tv = eval_basis_many(t, xs, 0)
            # dense sample matrices of all solution functions
            def dense(vals, first, n):
                out = np.zeros((xs.size, n))
                rows = np.arange(xs.size)[:, None]
                cols = first[:, None] + np.arange(vals.shape[1])[None, :]
                out[rows, cols] = vals
                return out

            f_s, v_s = eval_basis_many(s, xs, order)
            f_t, v_t = eval_basis_many(t, xs, 0)
            sol0 = dense(v_s[:, 0, :], f_s, s.n)
            sold = dense(v_s[:, order, :], f_s, s.n)
            tmat = dense(v_t[:, 0, :], f_t, t.n)
            i, j = rng.integers(0, s.n, size=2)
            for product in (sol0[:, i] * sol0[:, j], sold[:, i] * sold[:, j]):
                coef, *_ = np.linalg.lstsq(tmat, product, rcond=None)
                resid = np.abs(tmat @ coef - product).max()
                assert resid < 1e-10 * max(np.abs(product).max(), 1.0)


class TestExactIntegrals:
    def test_linear_symmetric(self):
        s = space_from([0, 0, 1, 1], 1)
        assert np.allclose(exact_integrals(s), [0.5, 0.5])

    def test_quadratic_example(self):
        s = space_from([0, 0, 0, 0.5, 1, 1, 1], 2)
        assert np.allclose(exact_integrals(s), [1 / 6, 1 / 3, 1 / 3, 1 / 6],
                           atol=1e-15)

    def test_against_per_span_gauss(self, rng):
        for _ in range(10):
            s = random_open_space(rng, max_elements=12)
            acc = np.zeros(s.n)
            for e in range(s.n_ele):
                a, b = s.element_bounds(e)
                x, w = gauss_on_interval(s.p + 1, a, b)
                first, vals = eval_basis_many(s, x, 0)
                for k in range(x.size):
                    acc[first[k]:first[k] + s.p + 1] += w[k] * vals[k, 0]
            assert np.abs(acc - exact_integrals(s)).max() < 1e-13


class TestInsertKnot:
    def test_dimension_grows_by_one(self):
        s = space_from([0, 0, 1, 1], 1)
        s2 = insert_knot(s, 0.5)
        assert (s.n, s2.n) == (2, 3)

    def test_total_measure_preserved(self, rng):
        for _ in range(5):
            s = random_open_space(rng, max_elements=6)
            a, b = s.domain
            x = float(rng.uniform(a + 0.1 * (b - a), b - 0.1 * (b - a)))
            s2 = insert_knot(s, x)
            assert abs(exact_integrals(s2).sum() - (b - a)) < 1e-13

    def test_original_functions_reproduced(self, rng):
        for _ in range(5):
            s = random_open_space(rng, max_elements=6, max_mult=1)
            a, b = s.domain
            s2 = insert_knot(s, float(rng.uniform(a + 0.2, b - 0.2)))
            g2 = greville_abscissae(s2)
            f2, v2 = eval_basis_many(s2, g2, 0)
            coll = np.zeros((s2.n, s2.n))
            rows = np.arange(s2.n)[:, None]
            coll[rows, f2[:, None] + np.arange(s2.p + 1)[None, :]] = v2[:, 0, :]
            samples = np.linspace(a, b, 50)
            fs, vs = eval_basis_many(s, samples, 0)
            f2s, v2s = eval_basis_many(s2, samples, 0)
            for i in range(s.n):
                target_at_g = np.zeros(s2.n)
                fg, vg = eval_basis_many(s, g2, 0)
                mask = (fg <= i) & (i <= fg + s.p)
                target_at_g[mask] = vg[mask, 0, i - fg[mask]]
                coef = np.linalg.solve(coll, target_at_g)
                old = np.zeros(samples.size)
                sel = (fs <= i) & (i <= fs + s.p)
                old[sel] = vs[sel, 0, i - fs[sel]]
                new = np.einsum("pk,pk->p", v2s[:, 0, :],
                                coef[f2s[:, None] + np.arange(s2.p + 1)])
                assert np.abs(new - old).max() < 1e-13

    def test_multiplicity_overflow_rejected(self):
        s = space_from([0, 0, 0, 0.5, 0.5, 0.5, 1, 1, 1], 2)
        with pytest.raises(InvalidRefinementError):
            insert_knot(s, 0.5)


class TestGreville:
    def test_linear_endpoints(self):
        s = space_from([0, 0, 1, 1], 1)
        assert np.allclose(greville_abscissae(s), [0.0, 1.0])

    def test_quadratic_bernstein(self):
        s = space_from([0, 0, 0, 1, 1, 1], 2)
        assert np.allclose(greville_abscissae(s), [0.0, 0.5, 1.0])

    def test_inside_support(self, rng):
        for _ in range(10):
            s = random_open_space(rng, max_elements=10)
            g = greville_abscissae(s)
            knots = s.kv.knots
            for i, x in enumerate(g):
                assert knots[i] - 1e-14 <= x <= knots[i + s.p + 1] + 1e-14
