import numpy as np
import pytest

from feasnet.encoding import (
    EncodingError,
    compute_neuron_bounds,
    encode_dnn,
    encode_max_violation,
    violation_model,
)
from feasnet.milp import BnbConfig, solve_milp, warm_start
from feasnet.network import DnnParams, forward, forward_batch
from feasnet.problem import (
    BoxBounds,
    InputDomain,
    LinearConstraintSet,
    OplcProblem,
    QuadraticObjective,
    uniform_calibration,
)


def small_box(n, lo=-5.0, hi=5.0):
    return BoxBounds(np.full(n, lo), np.full(n, hi))


def random_net(rng, dim_in, width, depth, dim_out, scale=0.8):
    params = DnnParams.init(dim_in, width, depth, dim_out, seed=int(rng.integers(1 << 30)))
    for arr in params.flat():
        arr *= scale
    return params


class TestNeuronBounds:
    def test_zero_weight_net_bounds_equal_biases(self):
        params = DnnParams([np.zeros((3, 2))], [np.array([1.0, -2.0, 0.5])],
                           np.zeros((2, 3)), np.array([0.7, -0.7]))
        dom = InputDomain.from_box([-1, -1], [1, 1])
        b = compute_neuron_bounds(params, dom, small_box(2))
        assert b.hmin[0] == pytest.approx([1.0, -2.0, 0.5])
        assert b.hmax[0] == pytest.approx([1.0, -2.0, 0.5])
        assert b.out_min == pytest.approx([0.7, -0.7])

    def test_single_layer_interval_arithmetic(self):
        params = DnnParams([np.array([[3.0]])], [np.array([1.0])],
                           np.array([[1.0]]), np.array([0.0]))
        dom = InputDomain.from_box([-1.0], [1.0])
        b = compute_neuron_bounds(params, dom, small_box(1, 0.0, 10.0))
        assert b.hmin[0] == pytest.approx([-2.0])
        assert b.hmax[0] == pytest.approx([4.0])

    def test_sampled_points_never_exceed_bounds(self):
        rng = np.random.default_rng(17)
        dom = InputDomain.from_box([-1.5, 0.0], [1.0, 2.0])
        box = small_box(2, -3.0, 3.0)
        params = random_net(rng, 2, 4, 2, 2)
        b = compute_neuron_bounds(params, dom, box)
        thetas = dom.sample(10_000, rng)
        h = thetas
        for li, (w, bias) in enumerate(zip(params.hidden_weights, params.hidden_biases)):
            pre = h @ w.T + bias
            assert np.all(pre >= b.hmin[li] - 1e-7)
            assert np.all(pre <= b.hmax[li] + 1e-7)
            h = np.maximum(pre, 0.0)
        out = h @ params.out_weight.T + params.out_bias
        assert np.all(out >= b.out_min - 1e-7)
        assert np.all(out <= b.out_max + 1e-7)
        xhat = forward_batch(params, thetas, box)
        assert np.all(xhat >= b.xhat_min - 1e-7)
        assert np.all(xhat <= b.xhat_max + 1e-7)

    def test_big_m_cap_reported(self):
        params = DnnParams([np.array([[1e6]])], [np.zeros(1)],
                           np.array([[1e6]]), np.zeros(1))
        dom = InputDomain.from_box([-100.0], [100.0])
        with pytest.raises(EncodingError, match="rescale"):
            compute_neuron_bounds(params, dom, small_box(1))


def recover_xhat(params, dom, box, theta, bounds=None):
    bounds = bounds or compute_neuron_bounds(params, dom, box)
    enc = encode_dnn(params, bounds, dom)
    enc.fix_theta(theta)
    res = solve_milp(enc.to_model({v: 1.0 for v in enc.xhat_vars}, minimize=False),
                     BnbConfig(node_limit=20_000))
    assert res.proven, res.status
    _, xhat = enc.extract(res.incumbent_x)
    return xhat


class TestEncodeDnn:
    def test_recovers_forward_pass(self):
        rng = np.random.default_rng(23)
        dom = InputDomain.from_box([-1.0, -1.0], [1.0, 1.0])
        box = small_box(2, -2.0, 2.0)
        for _ in range(5):
            params = random_net(rng, 2, 3, 2, 2)
            bounds = compute_neuron_bounds(params, dom, box)
            for _ in range(4):
                theta = rng.uniform(-1, 1, size=2)
                got = recover_xhat(params, dom, box, theta, bounds)
                assert got == pytest.approx(forward(params, theta, box), abs=1e-6)

    def test_stable_inactive_neuron_forced_off(self):
        # first neuron pre-activation is always <= -1 on the domain
        params = DnnParams([np.array([[1.0], [0.5]])], [np.array([-3.0, 0.0])],
                           np.array([[1.0, 1.0]]), np.array([0.0]))
        dom = InputDomain.from_box([-1.0], [1.0])
        bounds = compute_neuron_bounds(params, dom, small_box(1))
        assert bounds.hmax[0][0] < 0
        enc = encode_dnn(params, bounds, dom)
        z = enc.z_hidden[0][0]
        assert enc.builder.lo[z] == enc.builder.hi[z] == 0.0

    def test_stable_active_neuron_passthrough(self):
        params = DnnParams([np.array([[1.0]])], [np.array([5.0])],
                           np.array([[1.0]]), np.array([0.0]))
        dom = InputDomain.from_box([-1.0], [1.0])
        bounds = compute_neuron_bounds(params, dom, small_box(1))
        assert bounds.hmin[0][0] > 0
        enc = encode_dnn(params, bounds, dom)
        z = enc.z_hidden[0][0]
        assert enc.builder.lo[z] == enc.builder.hi[z] == 1.0

    def test_variable_census_matches_complexity_term(self):
        rng = np.random.default_rng(5)
        dom = InputDomain.from_box([-1, -1], [1, 1])
        box = small_box(3)
        params = random_net(rng, 2, 4, 3, 3)
        bounds = compute_neuron_bounds(params, dom, box)
        enc = encode_dnn(params, bounds, dom)
        census = enc.variable_census()
        depth, width, n = 3, 4, 3
        assert census["total"] == 2 * depth * width + 4 * n
        assert census["binaries"] == depth * width + 2 * n
        problem = OplcProblem(
            objective=QuadraticObjective(np.eye(n), np.zeros(n)),
            constraints=LinearConstraintSet(np.eye(n)[:2], np.zeros((2, 2)), [4.0, 4.0]),
            box=box,
            domain=dom,
        )
        encode_max_violation(enc, problem, uniform_calibration(problem, 0.0))
        census = enc.variable_census()
        assert census["total"] == 2 * depth * width + 4 * n + 2
        assert census["selector_binaries"] == 2


def one_row_problem(dom, box, a, b, e):
    n = box.dim_n
    return OplcProblem(
        objective=QuadraticObjective(np.eye(n), np.zeros(n)),
        constraints=LinearConstraintSet(a, b, e),
        box=box,
        domain=dom,
    )


class TestMaxViolation:
    def test_single_constraint_selector(self):
        rng = np.random.default_rng(2)
        dom = InputDomain.from_box([-1.0], [1.0])
        box = small_box(1, -2.0, 2.0)
        params = random_net(rng, 1, 3, 1, 1)
        problem = one_row_problem(dom, box, [[1.0]], [[0.0]], [0.5])
        cal = uniform_calibration(problem, 0.0)
        bounds = compute_neuron_bounds(params, dom, box)
        enc = encode_max_violation(encode_dnn(params, bounds, dom), problem, cal)
        res = solve_milp(violation_model(enc), BnbConfig())
        assert res.proven
        theta_star, xhat = enc.extract(res.incumbent_x)
        # selector must pick the only row, and nu equals its relative violation
        assert res.incumbent_x[enc.selector_vars[0]] == pytest.approx(1.0, abs=1e-6)
        want = (forward(params, theta_star, box)[0] - 0.5) / 0.5
        assert res.incumbent_obj == pytest.approx(want, abs=1e-6)

    def test_two_rows_known_values(self):
        # zero-weight net pins x^ = clamp(b_o); rows evaluate to fixed numbers
        dom = InputDomain.from_box([0.0], [1.0])
        box = BoxBounds([-2.0], [2.0])
        params = DnnParams([np.zeros((2, 1))], [np.zeros(2)], np.zeros((1, 2)),
                           np.array([1.2]))
        problem = one_row_problem(dom, box, [[1.0], [-1.0]], [[0.0], [0.0]], [1.0, 3.0])
        cal = uniform_calibration(problem, 0.0)
        bounds = compute_neuron_bounds(params, dom, box)
        enc = encode_max_violation(encode_dnn(params, bounds, dom), problem, cal)
        res = solve_milp(violation_model(enc))
        assert res.proven
        # rows: (1.2 - 1)/1 = 0.2 and (-1.2 - 3)/3 = -1.4; max is 0.2
        assert res.incumbent_obj == pytest.approx(0.2, abs=1e-7)
        assert res.incumbent_x[enc.selector_vars[0]] == pytest.approx(1.0, abs=1e-6)

    def test_selector_constant_never_binding(self):
        rng = np.random.default_rng(31)
        dom = InputDomain.from_box([-1.0, 0.0], [1.0, 1.0])
        box = small_box(2, -1.5, 1.5)
        for _ in range(8):
            params = random_net(rng, 2, 3, 2, 2)
            a = rng.uniform(-1, 1, size=(3, 2))
            b = rng.uniform(-0.5, 0.5, size=(3, 2))
            e = rng.uniform(0.5, 1.5, size=3) * rng.choice([-1.0, 1.0], size=3)
            problem = one_row_problem(dom, box, a, b, e)
            cal = uniform_calibration(problem, 0.1)
            bounds = compute_neuron_bounds(params, dom, box)
            enc = encode_max_violation(encode_dnn(params, bounds, dom), problem, cal)
            res = solve_milp(violation_model(enc), BnbConfig(node_limit=50_000))
            assert res.proven
            x = res.incumbent_x
            theta_star, xhat = enc.extract(x)
            nu = x[enc.violation_var]
            rows = (problem.constraints.values(xhat, theta_star) - cal.e_hat) / np.abs(e)
            # the selected row attains nu without help from the big constant
            j = int(np.argmax([x[s] for s in enc.selector_vars]))
            assert nu == pytest.approx(rows[j], abs=1e-6)
            assert nu == pytest.approx(np.max(rows), abs=1e-6)

    def test_warm_start_assignment_accepted(self):
        rng = np.random.default_rng(41)
        dom = InputDomain.from_box([-1.0], [1.0])
        box = small_box(1, -2.0, 2.0)
        params = random_net(rng, 1, 4, 2, 1)
        problem = one_row_problem(dom, box, [[1.0]], [[0.2]], [0.4])
        cal = uniform_calibration(problem, 0.0)
        bounds = compute_neuron_bounds(params, dom, box)
        enc = encode_max_violation(encode_dnn(params, bounds, dom), problem, cal)
        theta = np.array([0.3])
        vec = enc.assignment_for(theta)
        nu_val = (problem.constraints.values(forward(params, theta, box), theta)[0]
                  - cal.e_hat[0]) / abs(problem.constraints.e[0])
        vec[enc.violation_var] = nu_val
        vec[enc.selector_vars[0]] = 1.0
        model = violation_model(enc)
        assert warm_start(model, vec)
        res = solve_milp(model)
        assert res.proven
        assert res.incumbent_obj >= nu_val - 1e-9
