import numpy as np
import pytest

from feasnet.problem import (
    BoxBounds,
    InputDomain,
    LinearConstraintSet,
    OplcProblem,
    QuadraticObjective,
)


def flow_toy() -> OplcProblem:
    """Three-edge network-flow toy, reduced to two decision variables.

    Full form: min x1^2 + x2^2 + x3^2 over 0 <= x1, x2 <= 90 with rows
    x3 <= 70, x1 + x2 <= 90, x2 + x3 <= 90 and a load balance
    x1 + x2 + x3 = l for l in [0, 100].  Eliminating x3 = l - x1 - x2 gives
    the problem below; its maximum uniform calibration rate is 0.375.
    """
    a = np.array([
        [-1.0, -1.0],   # x3 = l - x1 - x2 <= 70
        [1.0, 1.0],     # x1 + x2 <= 90
        [-1.0, 0.0],    # x2 + x3 = l - x1 <= 90
    ])
    b = np.array([[1.0], [0.0], [1.0]])
    e = np.array([70.0, 90.0, 90.0])
    # objective x1^2 + x2^2 + (l - x1 - x2)^2 in 0.5 x'Qx + (d + R l)'x form
    q = np.array([[4.0, 2.0], [2.0, 4.0]])
    d = np.zeros(2)
    r = np.array([[-2.0], [-2.0]])
    return OplcProblem(
        objective=QuadraticObjective(q, d, r),
        constraints=LinearConstraintSet(a, b, e),
        box=BoxBounds(np.zeros(2), np.full(2, 90.0)),
        domain=InputDomain.from_box([0.0], [100.0]),
    )


@pytest.fixture
def toy() -> OplcProblem:
    return flow_toy()


def random_oplc(rng: np.random.Generator, n=2, m=1, n_rows=3) -> OplcProblem:
    """Small random feasible instance: rows are slack at the box center."""
    a = rng.uniform(-1.0, 1.0, size=(n_rows, n))
    b = rng.uniform(-0.5, 0.5, size=(n_rows, m))
    lo = -np.abs(rng.uniform(0.5, 1.5, size=n))
    hi = np.abs(rng.uniform(0.5, 1.5, size=n))
    dom_lo = -np.abs(rng.uniform(0.2, 1.0, size=m))
    dom_hi = np.abs(rng.uniform(0.2, 1.0, size=m))
    center_x = (lo + hi) / 2
    center_t = (dom_lo + dom_hi) / 2
    slack = rng.uniform(0.3, 1.0, size=n_rows)
    e = a @ center_x + b @ center_t + slack
    e[e == 0.0] = 0.1
    base = np.linalg.qr(rng.normal(size=(n, n)))[0]
    q = base @ np.diag(rng.uniform(0.5, 2.0, size=n)) @ base.T
    q = (q + q.T) / 2
    return OplcProblem(
        objective=QuadraticObjective(q, rng.uniform(-1, 1, size=n)),
        constraints=LinearConstraintSet(a, b, e),
        box=BoxBounds(lo, hi),
        domain=InputDomain.from_box(dom_lo, dom_hi),
    )
