import numpy as np
import pytest
from conftest import random_problem

from deltavar import (
    BothMultipliersZero,
    BoundarySpec,
    CompositeFunctional,
    EndpointNotFree,
    IsoConstraint,
    ProblemSpec,
    Trajectory,
    decision_indices,
    dubois_reymond_quantity,
    el_residual,
    embed_decision,
    extract_decision,
    functional_gradient,
    functional_hessian,
    inner_values,
    isoperimetric_residual,
    make_timescale,
    natural_bc_left,
    natural_bc_right,
    residual_report,
)
from deltavar.oracle import fd_gradient

THREE_PT = make_timescale("points", values=[0, 0.5, 1])
PRODUCT = CompositeFunctional.from_strings(["v^2", "t*v"], "u1 * u2")


def product_spec(ts=THREE_PT):
    return ProblemSpec(ts=ts, lagrangian=PRODUCT, bc=BoundarySpec.fixed(0, 1))


class TestDecisionEmbedding:
    def test_interior_only_when_both_fixed(self):
        spec = product_spec()
        assert list(decision_indices(spec)) == [1]

    def test_free_ends_extend_decisions(self):
        spec = ProblemSpec(
            ts=THREE_PT, lagrangian=PRODUCT, bc=BoundarySpec(left=None, right=1.0)
        )
        assert list(decision_indices(spec)) == [0, 1]

    def test_embed_extract_round_trip(self):
        spec = product_spec()
        tr = embed_decision(spec, [0.25])
        assert list(tr.x) == [0.0, 0.25, 1.0]
        assert extract_decision(spec, tr) == pytest.approx([0.25])


class TestElResidual:
    def test_linear_trajectory_of_simple_energy(self):
        ts = make_timescale("uniform", a=0, b=1, h=0.25)
        F = CompositeFunctional.from_strings(["v^2"], "u1")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec.fixed(0, 1))
        res = el_residual(spec, Trajectory(ts, ts.points))
        assert np.max(np.abs(res)) == 0.0

    def test_quotient_line_is_stationary(self):
        ts = make_timescale("points", values=[0, 1, 2])
        F = CompositeFunctional.from_strings(["v^2", "v + v^2"], "u1 / u2")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec.fixed(0, 4))
        res = el_residual(spec, Trajectory(ts, 2 * ts.points))
        assert np.max(np.abs(res)) <= 1e-14

    def test_three_point_product_formula(self):
        # Single residual: 2 * xdd(0) * F2 + F1 with both inner integrals.
        spec = product_spec()
        for w in (-0.5, 0.4, 1.3):
            tr = embed_decision(spec, [w])
            F = inner_values(PRODUCT, tr)
            xdd = (tr.x_delta[1] - tr.x_delta[0]) / 0.5
            expected = 2 * xdd * F[1] + F[0]
            res = el_residual(spec, tr)
            assert res.shape == (1,)
            assert res[0] == pytest.approx(expected, rel=1e-12)

    def test_length_is_kappa_count_minus_one(self):
        rng = np.random.default_rng(0)
        spec, tr = random_problem(rng)
        assert el_residual(spec, tr).size == spec.ts.kappa_count() - 1

    def test_identity_outer_map_reduces_to_classical_residual(self):
        # With H = u1 the residual is f_v^Delta - f_y sampled pointwise.
        ts = make_timescale("points", values=[0.0, 0.4, 1.0, 1.5, 2.1])
        F = CompositeFunctional.from_strings(["v^2 + t*y^2"], "u1")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec.fixed(0, 1))
        rng = np.random.default_rng(6)
        x = rng.standard_normal(len(ts))
        tr = Trajectory(ts, x)
        fv = 2 * tr.x_delta
        fy = 2 * ts.points[:-1] * tr.x_sigma[:-1]
        classical = (fv[1:] - fv[:-1]) / ts.steps[:-1] - fy[:-1]
        assert np.allclose(el_residual(spec, tr), classical, rtol=0, atol=1e-14)


class TestNaturalBoundaryConditions:
    def test_left_requires_free_end(self):
        with pytest.raises(EndpointNotFree):
            natural_bc_left(product_spec(), embed_decision(product_spec(), [0.5]))

    def test_left_simple_energy(self):
        ts = make_timescale("uniform", a=0, b=1, h=0.25)
        F = CompositeFunctional.from_strings(["v^2 - y"], "u1")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec(left=None, right=1.0))
        tr = Trajectory(ts, ts.points)
        # residual = 2 x^delta(a); zero iff the slope vanishes at a.
        assert natural_bc_left(spec, tr) == pytest.approx(2.0)
        flat = Trajectory(ts, np.concatenate([[ts.points[1]], ts.points[1:]]))
        assert natural_bc_left(spec, flat) == 0.0

    def test_right_without_y_dependence(self):
        ts = make_timescale("points", values=[0, 0.4, 1.1, 2.0])
        F = CompositeFunctional.from_strings(["v^2"], "u1")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec(left=0.0, right=None))
        tr = Trajectory(ts, ts.points**2)
        assert natural_bc_right(spec, tr) == pytest.approx(2 * tr.x_delta[-1])

    def test_vanishing_objective_weight_kills_left_residual(self):
        # With the first inner integral equal to zero the product weight
        # H'_2 = F1 vanishes, so only the F2-weighted term survives.
        ts = make_timescale("points", values=[0, 0.5, 1])
        spec = ProblemSpec(
            ts=ts, lagrangian=PRODUCT, bc=BoundarySpec(left=None, right=None)
        )
        tr = Trajectory(ts, [1.0, 1.0, 1.0])  # x^delta = 0 -> F1 = 0, f1v = 0
        assert natural_bc_left(spec, tr) == 0.0

    def test_fd_oracle_for_both_endpoints(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 25:
            spec, tr = random_problem(rng)
            step = 1e-6
            if not (spec.bc.left_fixed and spec.bc.right_fixed):
                g = fd_gradient(spec, tr, step)
                scale = 1 + float(np.max(np.abs(g)))
            if not spec.bc.left_fixed:
                assert abs(natural_bc_left(spec, tr) + g[0]) <= 1e-5 * scale
                checked += 1
            if not spec.bc.right_fixed:
                assert abs(natural_bc_right(spec, tr) - g[-1]) <= 1e-5 * scale
                checked += 1


class TestFunctionalGradient:
    def test_three_point_product_polynomial(self):
        spec = product_spec()
        for w in (-1.0, 0.0, 0.5, 1.7):
            g = functional_gradient(spec, embed_decision(spec, [w]))
            assert g[0] == pytest.approx(-6 * w**2 + 8 * w - 3, rel=1e-12, abs=1e-14)

    def test_constant_trajectory_of_pure_energy(self):
        ts = make_timescale("uniform", a=0, b=2, h=0.5)
        F = CompositeFunctional.from_strings(["v^2"], "u1")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec(left=None, right=None))
        g = functional_gradient(spec, Trajectory(ts, np.full(len(ts), 0.8)))
        assert np.max(np.abs(g)) == 0.0

    def test_matches_fd_oracle_on_random_specs(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            spec, tr = random_problem(rng)
            exact = functional_gradient(spec, tr)
            fd = fd_gradient(spec, tr, 1e-6)
            scale = 1 + float(np.max(np.abs(exact)))
            assert np.all(np.abs(exact - fd) <= 1e-6 * scale)


class TestGradientElIdentity:
    def test_interior_identity_and_endpoints(self):
        rng = np.random.default_rng(99)
        for _ in range(60):
            spec, tr = random_problem(rng)
            g = functional_gradient(spec, tr)
            el = el_residual(spec, tr)
            idx = decision_indices(spec)
            steps = spec.ts.steps
            for pos, point_index in enumerate(idx):
                if point_index == 0:
                    expected = -natural_bc_left(spec, tr)
                elif point_index == len(spec.ts) - 1:
                    expected = natural_bc_right(spec, tr)
                elif point_index - 1 < el.size:
                    expected = -steps[point_index - 1] * el[point_index - 1]
                else:
                    continue
                assert abs(g[pos] - expected) <= 1e-10 * (
                    1 + abs(g[pos]) + abs(expected)
                )


class TestHessian:
    def test_matches_fd_of_gradient(self):
        rng = np.random.default_rng(31)
        for _ in range(15):
            spec, tr = random_problem(rng)
            H = functional_hessian(spec, tr)
            z = extract_decision(spec, tr)
            step = 1e-6
            for j in range(z.size):
                zp = z.copy()
                zp[j] += step
                zm = z.copy()
                zm[j] -= step
                col = (
                    functional_gradient(spec, embed_decision(spec, zp))
                    - functional_gradient(spec, embed_decision(spec, zm))
                ) / (2 * step)
                scale = 1 + float(np.max(np.abs(H)))
                assert np.all(np.abs(H[:, j] - col) <= 2e-5 * scale)


class TestDuboisReymond:
    def test_stationary_line_constant(self):
        ts = make_timescale("points", values=[0, 1, 2])
        F = CompositeFunctional.from_strings(["v^2", "v + v^2"], "u1 / u2")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec.fixed(0, 4))
        E = dubois_reymond_quantity(spec, Trajectory(ts, 2 * ts.points))
        assert E.max() - E.min() <= 1e-10

    def test_no_y_dependence_constant_slope(self):
        ts = make_timescale("points", values=[0, 0.3, 1.1, 2.0])
        F = CompositeFunctional.from_strings(["v^2"], "u1")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec.fixed(0, 2))
        E = dubois_reymond_quantity(spec, Trajectory(ts, ts.points))
        assert E.max() - E.min() == 0.0

    def test_non_stationary_has_positive_spread(self):
        spec = product_spec()
        E = dubois_reymond_quantity(spec, embed_decision(spec, [0.9]))
        assert E.max() - E.min() > 1e-3


class TestIsoperimetricResidual:
    def iso_spec(self, ts):
        L = CompositeFunctional.from_strings(["v^2", "t*v"], "u1 / u2")
        K = IsoConstraint(CompositeFunctional.from_strings(["t*v"], "u1"), 1.0)
        return ProblemSpec(ts=ts, lagrangian=L, bc=BoundarySpec.fixed(0, 1), constraint=K)

    def test_both_multipliers_zero_rejected(self):
        spec = self.iso_spec(THREE_PT)
        with pytest.raises(BothMultipliersZero):
            isoperimetric_residual(spec, embed_decision(spec, [-1.0]), 0.0, 0.0)

    def test_fine_grid_candidate_with_multiplier_eight(self):
        ts = make_timescale("interval", a=0, b=1, h=1e-3)
        spec = self.iso_spec(ts)
        t = ts.points
        tr = Trajectory(ts, 3 * t**2 - 2 * t)
        res = isoperimetric_residual(spec, tr, 1.0, 8.0)
        assert np.max(np.abs(res)) <= 0.05

    def test_lambda_zero_reduces_to_objective_residual(self):
        spec = self.iso_spec(THREE_PT)
        tr = embed_decision(spec, [-1.0])
        assert np.array_equal(
            isoperimetric_residual(spec, tr, 1.0, 0.0), el_residual(spec, tr)
        )

    def test_lambda0_zero_is_constraint_extremal_test(self):
        spec = self.iso_spec(THREE_PT)
        tr = embed_decision(spec, [-1.0])
        res = isoperimetric_residual(spec, tr, 0.0, 1.0)
        expected = -el_residual(spec, tr, functional=spec.constraint.functional)
        assert np.array_equal(res, expected)

    def test_combination_is_linear(self):
        spec = self.iso_spec(THREE_PT)
        tr = embed_decision(spec, [0.4])
        lam = 2.75
        combo = isoperimetric_residual(spec, tr, 1.0, lam)
        manual = el_residual(spec, tr) - lam * el_residual(
            spec, tr, functional=spec.constraint.functional
        )
        assert np.array_equal(combo, manual)

    def test_requires_constraint(self):
        spec = product_spec()
        with pytest.raises(ValueError):
            isoperimetric_residual(spec, embed_decision(spec, [0.5]), 1.0, 1.0)

    def test_constraint_requires_fixed_ends(self):
        K = IsoConstraint(CompositeFunctional.from_strings(["t*v"], "u1"), 1.0)
        with pytest.raises(ValueError):
            ProblemSpec(
                ts=THREE_PT,
                lagrangian=PRODUCT,
                bc=BoundarySpec(left=None, right=1.0),
                constraint=K,
            )


class TestResidualReport:
    def test_report_shapes_and_norms(self):
        spec = product_spec()
        tr = embed_decision(spec, [0.5])
        report = residual_report(spec, tr)
        assert report.el.size == spec.ts.kappa_count() - 1
        assert report.nat_left is None and report.nat_right is None
        assert report.el_max == np.max(np.abs(report.el))
        assert report.max_residual == report.el_max

    def test_report_includes_free_bcs(self):
        ts = make_timescale("uniform", a=0, b=1, h=0.25)
        F = CompositeFunctional.from_strings(["v^2 + y^2"], "u1")
        spec = ProblemSpec(ts=ts, lagrangian=F, bc=BoundarySpec(left=None, right=None))
        report = residual_report(spec, Trajectory(ts, ts.points))
        assert report.nat_left is not None and report.nat_right is not None
