import itertools

import numpy as np
import pytest

from feasnet.lp import LpProblem, solve_lp
from feasnet.milp import (
    BnbConfig,
    MilpModel,
    MilpStatus,
    solve_milp,
    warm_start,
    write_lp_text,
)


def knapsack_model(values, weights, capacity) -> MilpModel:
    n = len(values)
    base = LpProblem.from_rows(
        c=np.asarray(values, dtype=float),
        rows=[(np.asarray(weights, dtype=float), "<", float(capacity))],
        var_bounds=[(0.0, 1.0)] * n,
        minimize=False,
    )
    return MilpModel(base=base, binaries=list(range(n)))


VALUES = [10.0, 13.0, 7.0, 11.0, 6.0]
WEIGHTS = [4.0, 6.0, 3.0, 5.0, 2.0]
CAP = 10.0


def brute_force_knapsack():
    best, best_pick = -np.inf, None
    for pick in itertools.product([0, 1], repeat=5):
        w = np.dot(pick, WEIGHTS)
        if w <= CAP:
            v = np.dot(pick, VALUES)
            if v > best:
                best, best_pick = v, pick
    return best, best_pick


def test_knapsack_matches_enumeration():
    model = knapsack_model(VALUES, WEIGHTS, CAP)
    res = solve_milp(model)
    best, _ = brute_force_knapsack()
    assert res.proven
    assert res.incumbent_obj == pytest.approx(best)
    assert res.best_bound == pytest.approx(best, abs=1e-6)


def test_no_binaries_is_lp_passthrough():
    base = LpProblem.from_rows([1.0, 1.0], [([1.0, 1.0], ">", 1.0)], [(0.0, None)] * 2)
    model = MilpModel(base=base, binaries=[])
    res = solve_milp(model)
    ref = solve_lp(base)
    assert res.proven
    assert res.incumbent_obj == pytest.approx(ref.objective)
    assert np.allclose(res.incumbent_x, ref.x)


def test_infeasible_model():
    base = LpProblem.from_rows([1.0], [([1.0], ">", 0.6), ([1.0], "<", 0.4)],
                               [(0.0, 1.0)])
    res = solve_milp(MilpModel(base=base, binaries=[0]))
    assert res.status is MilpStatus.INFEASIBLE


class TestWarmStart:
    def test_feasible_point_reduces_node_count(self):
        model_cold = knapsack_model(VALUES, WEIGHTS, CAP)
        cold = solve_milp(model_cold)
        model_warm = knapsack_model(VALUES, WEIGHTS, CAP)
        _, best_pick = brute_force_knapsack()
        assert warm_start(model_warm, np.asarray(best_pick, dtype=float))
        warm = solve_milp(model_warm)
        assert warm.proven
        assert warm.incumbent_obj == pytest.approx(cold.incumbent_obj)
        assert warm.nodes < cold.nodes

    def test_infeasible_point_rejected(self):
        model = knapsack_model(VALUES, WEIGHTS, CAP)
        assert not warm_start(model, np.ones(5))  # weight 20 > 10
        assert model.warm_x is None

    def test_fractional_point_rejected(self):
        model = knapsack_model(VALUES, WEIGHTS, CAP)
        assert not warm_start(model, np.full(5, 0.5))


def test_bound_monotonicity_trace():
    model = knapsack_model(VALUES, WEIGHTS, CAP)
    res = solve_milp(model, BnbConfig(record_trace=True))
    bounds = [t[1] for t in res.trace]
    incs = [t[2] for t in res.trace if t[2] is not None]
    # maximization: upper bound non-increasing, incumbent non-decreasing
    assert all(b2 <= b1 + 1e-9 for b1, b2 in zip(bounds, bounds[1:]))
    assert all(i2 >= i1 - 1e-9 for i1, i2 in zip(incs, incs[1:]))


def test_node_order_permutation_same_optimum():
    results = [
        solve_milp(knapsack_model(VALUES, WEIGHTS, CAP), BnbConfig(node_order=order))
        for order in ("best", "dfs", "breadth")
    ]
    assert all(r.proven for r in results)
    objs = [r.incumbent_obj for r in results]
    assert max(objs) - min(objs) < 1e-6


def test_parallel_mode_same_optimum():
    seq = solve_milp(knapsack_model(VALUES, WEIGHTS, CAP), BnbConfig(parallel=False))
    par = solve_milp(knapsack_model(VALUES, WEIGHTS, CAP), BnbConfig(parallel=True))
    assert seq.proven and par.proven
    assert seq.incumbent_obj == pytest.approx(par.incumbent_obj, abs=1e-9)


def test_node_limit_yields_valid_bound():
    model = knapsack_model(VALUES, WEIGHTS, CAP)
    res = solve_milp(model, BnbConfig(node_limit=1))
    best, _ = brute_force_knapsack()
    assert res.status in (MilpStatus.BOUND_ONLY, MilpStatus.INCUMBENT_ONLY)
    assert res.best_bound >= best - 1e-9  # maximization: valid upper bound
    if res.incumbent_obj is not None:
        assert res.incumbent_obj <= best + 1e-9


def test_incumbent_rechecks_feasible():
    model = knapsack_model(VALUES, WEIGHTS, CAP)
    res = solve_milp(model)
    assert model.check_feasible(res.incumbent_x, 1e-6)


def test_minimization_sense():
    base = LpProblem.from_rows(
        c=[1.0, 1.0, 1.0],
        rows=[([1.0, 1.0, 1.0], ">", 1.5)],
        var_bounds=[(0.0, 1.0)] * 3,
        minimize=True,
    )
    res = solve_milp(MilpModel(base=base, binaries=[0, 1, 2]))
    assert res.proven
    assert res.incumbent_obj == pytest.approx(2.0)


def test_lp_text_dump_smoke():
    model = knapsack_model(VALUES, WEIGHTS, CAP)
    text = write_lp_text(model)
    assert text.startswith("max:")
    assert "binary" in text
    assert "r0:" in text and text.endswith("end\n")
