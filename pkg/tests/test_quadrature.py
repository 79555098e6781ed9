"""Gauss-Legendre and patch-wise rules, tensor rules, count predictors."""

import numpy as np
import pytest

from conftest import random_solution_space
from trimquad.errors import NonConvergenceError
from trimquad.quadrature import (
    QuadRule1D,
    RuleProvenance,
    bucket_points,
    efficiency_constant,
    gauss_legendre,
    optimal_point_count,
    per_span_gauss,
    predict_counts,
    solve_patchwise_1d,
    tensor_rule,
)
from trimquad.splines import (
    Mesh2D,
    SplineSpace1D,
    eval_basis_many,
    exact_integrals,
    insert_knot,
    make_open_knots,
    target_space,
    uniform_space,
)


def max_rule_residual(points, weights, space):
    first, vals = eval_basis_many(space, points, 0)
    acc = np.zeros(space.n)
    for k in range(points.size):
        acc[first[k]:first[k] + space.p + 1] += weights[k] * vals[k, 0]
    a, b = space.domain
    return np.abs(acc - exact_integrals(space)).max() / (b - a)


class TestGaussLegendre:
    def test_one_point(self):
        r = gauss_legendre(1)
        assert np.allclose(r.points, [0.0]) and np.allclose(r.weights, [2.0])

    def test_two_points(self):
        r = gauss_legendre(2)
        assert np.allclose(r.points, [-1 / np.sqrt(3), 1 / np.sqrt(3)])
        assert np.allclose(r.weights, [1.0, 1.0])

    def test_monomial_degree_eight(self):
        r = gauss_legendre(5)
        assert abs(np.sum(r.weights * r.points ** 8) - 2.0 / 9.0) < 1e-14

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError):
            gauss_legendre(0)


class TestOptimalPointCount:
    @pytest.mark.parametrize("n,count", [(9, 5), (2, 1), (1, 1)])
    def test_examples(self, n, count):
        assert optimal_point_count(n) == count


class TestPatchwiseRule:
    def test_single_span_equals_gauss(self):
        # degree-4 target of a one-element quadratic space
        target = target_space(uniform_space(2, 1), "plane")
        rule = solve_patchwise_1d(target)
        gauss = gauss_legendre(3)
        assert np.abs(rule.points - 0.5 * (gauss.points + 1)).max() < 1e-12
        assert np.abs(rule.weights - 0.5 * gauss.weights).max() < 1e-12

    def test_uniform_cubic_point_count(self):
        # eight elements at maximum regularity: dimension (p+2)n + p - 1
        target = target_space(uniform_space(3, 8), "plane")
        assert target.n == 42
        rule = solve_patchwise_1d(target)
        assert rule.count == 21
        assert max_rule_residual(rule.points, rule.weights, target) < 1e-12

    @pytest.mark.parametrize("element_type", ["plane", "kl_plate"])
    def test_random_targets_exact(self, rng, element_type):
        for _ in range(15):
            sol = random_solution_space(rng, element_type)
            target = target_space(sol, element_type)
            rule = solve_patchwise_1d(target)
            assert rule.count == optimal_point_count(target.n)
            assert max_rule_residual(rule.points, rule.weights, target) < 1e-12

    def test_superspace_exactness_on_odd_dimension(self):
        # dimension 6n+3 is odd for every element count at this degree
        sol = uniform_space(4, 4)
        target = target_space(sol, "plane")
        assert target.n % 2 == 1
        rule = solve_patchwise_1d(target)
        assert rule.count == optimal_point_count(target.n)
        assert max_rule_residual(rule.points, rule.weights, target) < 1e-12

    def test_points_interior_weights_positive(self, rng):
        for _ in range(5):
            target = target_space(random_solution_space(rng, "plane"), "plane")
            rule = solve_patchwise_1d(target)
            a, b = target.domain
            assert rule.points[0] > a and rule.points[-1] < b
            assert np.all(np.diff(rule.points) > 0)
            assert np.all(rule.weights > 0)
            assert abs(rule.weights.sum() - (b - a)) < 1e-12 * max(1.0, b - a)

    @pytest.mark.parametrize("p,element_type,limit", [
        (2, "plane", 2.0), (3, "plane", 2.5), (4, "plane", 3.0),
        (5, "plane", 3.5), (3, "kl_plate", 3.0), (4, "kl_plate", 3.5),
        (5, "kl_plate", 4.0),
    ])
    def test_asymptotic_points_per_element(self, p, element_type, limit):
        target = target_space(uniform_space(p, 128), element_type)
        rule = solve_patchwise_1d(target)
        assert abs(rule.count / 128 - limit) < 0.05

    def test_nonconvergence_carries_residual(self, monkeypatch):
        import trimquad.quadrature as q

        monkeypatch.setattr(q, "_newton", lambda *a, **k: None)
        target = target_space(uniform_space(2, 4), "plane")
        with pytest.raises(NonConvergenceError) as err:
            q.solve_patchwise_1d(target)
        assert hasattr(err.value, "residual")


class TestTensorRule:
    def make_rules(self, p=2, n=4):
        su = uniform_space(p, n)
        ru = solve_patchwise_1d(target_space(su, "plane"))
        return su, ru

    def test_product_count(self):
        su, ru = self.make_rules()
        mesh = Mesh2D.from_spaces(su, su)
        r2 = tensor_rule(ru, ru, mesh)
        assert r2.count == ru.count ** 2

    def test_weight_sum_is_area(self):
        su, ru = self.make_rules()
        mesh = Mesh2D.from_spaces(su, su)
        r2 = tensor_rule(ru, ru, mesh)
        assert abs(r2.weights.sum() - 1.0) < 1e-12

    def test_patchwise_element_weight_sums_differ_from_area(self):
        # the rule abolishes element bounds as integration bounds, so the
        # weights bucketed in one element do not sum to the element area
        su, ru = self.make_rules(p=3, n=8)
        mesh = Mesh2D.from_spaces(su, su)
        r2 = tensor_rule(ru, ru, mesh)
        area = mesh.element_area(mesh.flat(3, 3))
        s = r2.weights[r2.buckets[mesh.flat(3, 3)]].sum()
        assert abs(s - area) > 1e-3 * area

    def test_buckets_are_a_partition(self):
        su, ru = self.make_rules(p=2, n=8)
        mesh = Mesh2D.from_spaces(su, su)
        r2 = tensor_rule(ru, ru, mesh)
        seen = np.concatenate([b for b in r2.buckets])
        assert seen.size == r2.count
        assert np.unique(seen).size == r2.count

    def test_gauss_tensor_points_per_element(self):
        p, n = 3, 5
        su = uniform_space(p, n)
        mesh = Mesh2D.from_spaces(su, su)
        rg = per_span_gauss(su, p + 1)
        r2 = tensor_rule(rg, rg, mesh)
        for bucket in r2.buckets:
            assert bucket.size == (p + 1) ** 2

    def test_patchwise_average_near_table_density(self):
        p, n = 2, 64
        su = uniform_space(p, n)
        mesh = Mesh2D.from_spaces(su, su)
        ru = solve_patchwise_1d(target_space(su, "plane"))
        r2 = tensor_rule(ru, ru, mesh)
        avg = np.mean([b.size for b in r2.buckets])
        assert abs(avg - 4.0) < 0.35  # two points per direction in the limit

    def test_rebucket_matches_tensor_buckets(self):
        su, ru = self.make_rules(p=2, n=6)
        mesh = Mesh2D.from_spaces(su, su)
        r2 = tensor_rule(ru, ru, mesh)
        r3 = bucket_points(r2, mesh)
        for b2, b3 in zip(r2.buckets, r3.buckets):
            assert np.array_equal(np.sort(b2), np.sort(b3))


class TestCountPredictors:
    def test_plane_constant(self):
        assert abs(efficiency_constant(2, 2, "plane") - 1.25) < 1e-15

    def test_plate_constant(self):
        assert abs(efficiency_constant(3, 3, "kl_plate") - 28.0 / 36.0) < 1e-15

    def test_decision_rule_equivalence(self, rng):
        # the predicted-count comparison over active elements is identical
        # to the transition/patch-wise ratio test against the constant
        for _ in range(200):
            p = int(rng.integers(2, 6))
            kind = "plane" if rng.random() < 0.5 else "kl_plate"
            n_t, n_tra, n_pw, n_ia = rng.integers(1, 400, size=4)
            rep = predict_counts(p, p, kind, int(n_t), int(n_tra),
                                 int(n_pw), int(n_ia))
            assert rep.use_rule == (n_tra / n_pw < rep.c)

    def test_gauss_counts(self):
        rep = predict_counts(2, 2, "plane", 5, 10, 85, 12)
        assert rep.n_gauss_total == 9 * 112
        assert rep.n_gauss_active == 9 * 100
