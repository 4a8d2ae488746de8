import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from feasnet.problem import (
    BoxBounds,
    InputDomain,
    LinearConstraintSet,
    OplcProblem,
    QuadraticObjective,
    ZeroLimitError,
    calibrate_limits,
    is_feasible,
    min_relative_redundancy,
    problem_from_json,
    problem_to_json,
    residuals,
    uniform_calibration,
)


class TestCalibrateLimits:
    def test_positive_limit_example(self):
        out = calibrate_limits([90.0], [0.375])
        assert out.e_hat == pytest.approx([56.25])

    def test_negative_limit_branch(self):
        out = calibrate_limits([-10.0], [0.1])
        assert out.e_hat == pytest.approx([-11.0])

    def test_zero_rate_identity(self):
        out = calibrate_limits([70.0, 90.0], [0.0, 0.0])
        assert np.array_equal(out.e_hat, [70.0, 90.0])

    def test_rate_out_of_range(self):
        with pytest.raises(ValueError):
            calibrate_limits([1.0], [1.0])
        with pytest.raises(ValueError):
            calibrate_limits([1.0], [-0.1])

    def test_zero_limit_rejected(self):
        with pytest.raises(ZeroLimitError):
            calibrate_limits([0.0], [0.1])

    @given(
        e=st.lists(st.floats(-100, 100).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=6),
        eta=st.floats(0.0, 0.999),
    )
    def test_tightening_and_sign(self, e, eta):
        e = np.array(e)
        out = calibrate_limits(e, np.full(e.size, eta))
        # the sign rule always tightens: e_hat <= e with |shift| = |e| * eta
        assert np.all(out.e_hat <= e + 1e-12)
        assert np.allclose(e - out.e_hat, np.abs(e) * eta, atol=1e-9)
        assert np.all(np.sign(out.e_hat) == np.sign(e))


class TestResiduals:
    def test_simple_row(self):
        p = OplcProblem(
            objective=QuadraticObjective(np.eye(2), np.zeros(2)),
            constraints=LinearConstraintSet([[1.0, 1.0]], [[0.0]], [90.0]),
            box=BoxBounds([0, 0], [100, 100]),
            domain=InputDomain.from_box([0.0], [1.0]),
        )
        r = residuals(p, [56.25, 43.75], [0.0])
        assert r == pytest.approx([10.0])

    def test_dimension_mismatch(self, toy):
        with pytest.raises(ValueError):
            residuals(toy, [1.0, 2.0, 3.0], [0.0])

    def test_matches_rowwise_recomputation(self, toy):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.uniform(-5, 95, size=2)
            theta = rng.uniform(0, 100, size=1)
            got = residuals(toy, x, theta)
            cons = toy.constraints
            want = [
                float(np.dot(cons.a[j], x) + np.dot(cons.b[j], theta) - cons.e[j])
                for j in range(cons.n_rows)
            ]
            assert got == pytest.approx(want, abs=1e-12)


class TestMinRelativeRedundancy:
    def test_toy_at_full_load(self, toy):
        # full-space point (56.25, 0, 43.75) maps to reduced (56.25, 0) at l=100
        assert min_relative_redundancy(toy, [56.25, 0.0], [100.0]) == pytest.approx(0.375)

    def test_all_rows_slack_by_limit(self):
        p = OplcProblem(
            objective=QuadraticObjective(np.eye(1), np.zeros(1)),
            constraints=LinearConstraintSet([[1.0], [1.0]], [[0.0], [0.0]], [2.0, 4.0]),
            box=BoxBounds([-10], [10]),
            domain=InputDomain.from_box([0.0], [1.0]),
        )
        # g = 0 on both rows: redundancy is exactly |e|/|e| = 1 on each
        assert min_relative_redundancy(p, [0.0], [0.5]) == pytest.approx(1.0)

    def test_violating_point_is_negative(self, toy):
        rng = np.random.default_rng(3)
        for _ in range(25):
            x = rng.uniform(0, 90, size=2)
            theta = rng.uniform(0, 100, size=1)
            r = residuals(toy, x, theta)
            expected = np.min(-r / np.abs(toy.constraints.e))
            assert min_relative_redundancy(toy, x, theta) == pytest.approx(float(expected))

    def test_redundancy_threshold_equals_calibrated_feasibility(self, toy):
        rng = np.random.default_rng(11)
        eta = 0.2
        cal = uniform_calibration(toy, eta)
        for _ in range(200):
            x = rng.uniform(0, 90, size=2)
            theta = rng.uniform(0, 100, size=1)
            nu = min_relative_redundancy(toy, x, theta)
            feas = is_feasible(toy, x, theta, limits=cal.e_hat)
            if abs(nu - eta) > 1e-9:
                assert feas == (nu >= eta)


class TestShrinkingProperty:
    def test_tighter_rates_shrink_feasible_set(self, toy):
        rng = np.random.default_rng(5)
        eta_lo = np.array([0.05, 0.1, 0.0])
        eta_hi = eta_lo + np.array([0.1, 0.0, 0.2])
        cal_lo = calibrate_limits(toy.constraints.e, eta_lo)
        cal_hi = calibrate_limits(toy.constraints.e, eta_hi)
        kept = 0
        for _ in range(1000):
            x = rng.uniform(0, 90, size=2)
            theta = rng.uniform(0, 100, size=1)
            if is_feasible(toy, x, theta, limits=cal_hi.e_hat):
                kept += 1
                assert is_feasible(toy, x, theta, limits=cal_lo.e_hat)
        assert kept > 0


class TestConstruction:
    def test_empty_domain_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            InputDomain([[1.0], [-1.0]], [0.0, -1.0])  # theta <= 0 and theta >= 1

    def test_box_invariant(self):
        with pytest.raises(ValueError):
            BoxBounds([1.0], [0.0])

    def test_zero_limit_row_rejected(self):
        with pytest.raises(ZeroLimitError):
            LinearConstraintSet([[1.0]], [[0.0]], [0.0])

    def test_non_psd_rejected(self):
        with pytest.raises(ValueError):
            QuadraticObjective(np.array([[-1.0]]), np.zeros(1))

    def test_domain_sampling_stays_inside(self):
        dom = InputDomain([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], [1.0, 0.0, 0.0])
        pts = dom.sample(500, np.random.default_rng(0))
        assert pts.shape == (500, 2)
        assert all(dom.contains(p) for p in pts)


class TestJsonRoundTrip:
    def test_exact_round_trip(self, toy):
        text = problem_to_json(toy)
        back = problem_from_json(text)
        assert np.array_equal(back.constraints.a, toy.constraints.a)
        assert np.array_equal(back.constraints.b, toy.constraints.b)
        assert np.array_equal(back.constraints.e, toy.constraints.e)
        assert np.array_equal(back.box.lower, toy.box.lower)
        assert np.array_equal(back.objective.q, toy.objective.q)
        assert np.array_equal(back.objective.input_coupling, toy.objective.input_coupling)
        assert np.array_equal(back.domain.a_theta, toy.domain.a_theta)

    def test_awkward_doubles_survive(self, toy):
        import math

        vals = np.array([math.pi, 1 / 3, 1e-17, 6.02e23])
        p = OplcProblem(
            objective=QuadraticObjective(np.eye(2) * vals[0], vals[1:3]),
            constraints=LinearConstraintSet([[vals[2], vals[3]]], [[vals[0]]], [vals[1]]),
            box=BoxBounds([-vals[3], -1.0], [vals[3], 1.0]),
            domain=InputDomain.from_box([0.0], [vals[0]]),
        )
        back = problem_from_json(problem_to_json(p))
        assert np.array_equal(back.constraints.a, p.constraints.a)
        assert np.array_equal(back.objective.d, p.objective.d)
