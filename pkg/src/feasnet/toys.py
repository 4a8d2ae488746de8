"""Built-in benchmark problems used by the demos, tests, and CLI."""

from __future__ import annotations

import numpy as np

from feasnet.config import INF
from feasnet.preprocess import AffineReconstruction, eliminate_equalities
from feasnet.problem import (
    BoxBounds,
    InputDomain,
    LinearConstraintSet,
    OplcProblem,
    QuadraticObjective,
)


def flow_toy_full() -> tuple[OplcProblem, np.ndarray, np.ndarray, np.ndarray]:
    """Three-edge quadratic network-flow toy, before equality elimination.

    min x1^2 + x2^2 + x3^2 over 0 <= x1, x2 <= 90 (x3 unbounded) subject to
    x3 <= 70, x1 + x2 <= 90, x2 + x3 <= 90, and the load balance
    x1 + x2 + x3 = l for a scalar load l in [0, 100].  Its maximum uniform
    calibration rate is 0.375.
    """
    problem = OplcProblem(
        objective=QuadraticObjective(2.0 * np.eye(3), np.zeros(3)),
        constraints=LinearConstraintSet(
            a=np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]),
            b=np.zeros((3, 1)),
            e=np.array([70.0, 90.0, 90.0]),
        ),
        box=BoxBounds([0.0, 0.0, -INF], [90.0, 90.0, INF]),
        domain=InputDomain.from_box([0.0], [100.0]),
    )
    a_eq = np.array([[1.0, 1.0, 1.0]])
    rhs_theta = np.array([[1.0]])
    rhs_const = np.array([0.0])
    return problem, a_eq, rhs_theta, rhs_const


def flow_toy() -> tuple[OplcProblem, AffineReconstruction]:
    """The flow toy reduced to (x1, x2) by eliminating x3 = l - x1 - x2."""
    problem, a_eq, rhs_theta, rhs_const = flow_toy_full()
    return eliminate_equalities(a_eq, rhs_theta, rhs_const, problem, pivots=[2])


def corner_qp() -> OplcProblem:
    """Synthetic binding instance: 3 variables, 2 inputs, 4 critical rows.

    The objective pulls toward the box corner (1, 1, 1), so the coupling rows
    bind at heavy inputs and a network trained on uniform samples tends to
    violate them near the domain boundary.
    """
    q = 2.0 * np.eye(3)
    d = -2.0 * np.ones(3)
    a = np.array([
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 1.0],
        [1.0, 0.0, 1.0],
        [-1.0, -1.0, -1.0],
    ])
    b = np.array([
        [0.5, 0.0],
        [0.0, 0.5],
        [0.25, 0.25],
        [0.0, 0.0],
    ])
    e = np.array([1.7, 1.7, 1.7, -0.3])
    return OplcProblem(
        objective=QuadraticObjective(q, d),
        constraints=LinearConstraintSet(a, b, e),
        box=BoxBounds(np.zeros(3), np.ones(3)),
        domain=InputDomain.from_box([0.0, 0.0], [1.0, 1.0]),
    )


BUILTIN_PROBLEMS = {
    "flow3": lambda: flow_toy()[0],
    "corner3": corner_qp,
}


def builtin_problem(name: str) -> OplcProblem:
    try:
        return BUILTIN_PROBLEMS[name]()
    except KeyError:
        raise KeyError(f"unknown builtin problem {name!r}; have {sorted(BUILTIN_PROBLEMS)}")
