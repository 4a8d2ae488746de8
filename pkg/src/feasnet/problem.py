"""Problem representation: input polytope, box bounds, linear constraint rows,
objective, and the limit-calibration / residual primitives shared by the
whole pipeline.

A problem instance couples decision variables ``x`` (length N, box-bounded)
with inputs ``theta`` (length M, ranging over a polytope D) through linear
inequality rows ``a_j @ x + b_j @ theta <= e_j``.  All values are immutable
after construction; every operation here is a pure function of its inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from feasnet.config import DEFAULT_CONFIG, INF, NumericConfig, is_free
from feasnet.lp import LpProblem, SolveStatus, solve_lp


class ZeroLimitError(ValueError):
    """A constraint row has limit 0; shift it by an auxiliary constant first."""


@dataclass(frozen=True)
class InputDomain:
    """Polytope of problem inputs ``{theta | a_theta @ theta <= b_theta}``."""

    a_theta: np.ndarray
    b_theta: np.ndarray
    bounding_lo: np.ndarray = None
    bounding_hi: np.ndarray = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_theta, dtype=float))
        b = np.asarray(self.b_theta, dtype=float).ravel()
        if a.shape[0] != b.size:
            raise ValueError("a_theta row count must match b_theta length")
        if a.shape[1] < 1:
            raise ValueError("input dimension must be at least 1")
        object.__setattr__(self, "a_theta", a)
        object.__setattr__(self, "b_theta", b)
        if self.bounding_lo is None:
            lo, hi = _polytope_bounding_box(a, b)
            object.__setattr__(self, "bounding_lo", lo)
            object.__setattr__(self, "bounding_hi", hi)
        else:
            object.__setattr__(self, "bounding_lo", np.asarray(self.bounding_lo, dtype=float))
            object.__setattr__(self, "bounding_hi", np.asarray(self.bounding_hi, dtype=float))

    @classmethod
    def from_box(cls, lo, hi) -> "InputDomain":
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        if np.any(lo > hi):
            raise ValueError("box domain needs lo <= hi")
        m = lo.size
        a = np.vstack([np.eye(m), -np.eye(m)])
        b = np.concatenate([hi, -lo])
        return cls(a, b, bounding_lo=lo.copy(), bounding_hi=hi.copy())

    @property
    def dim_m(self) -> int:
        return self.a_theta.shape[1]

    def contains(self, theta, tol: float = 1e-9) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(self.a_theta @ theta <= self.b_theta + tol))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform rejection sampling over the bounding box; (n, M) array."""
        out = np.empty((n, self.dim_m))
        have = 0
        while have < n:
            batch = rng.uniform(self.bounding_lo, self.bounding_hi, size=(max(64, n), self.dim_m))
            ok = np.all(batch @ self.a_theta.T <= self.b_theta + 1e-12, axis=1)
            take = batch[ok][: n - have]
            out[have : have + take.shape[0]] = take
            have += take.shape[0]
        return out


def _polytope_bounding_box(a: np.ndarray, b: np.ndarray):
    """Per-coordinate [min, max] over the polytope; also the nonemptiness check."""
    m = a.shape[1]
    base = LpProblem.from_rows(np.zeros(m), [(a[i], "<", b[i]) for i in range(a.shape[0])],
                               [(None, None)] * m)
    lo = np.empty(m)
    hi = np.empty(m)
    for k in range(m):
        c = np.zeros(m)
        c[k] = 1.0
        rmin = solve_lp(base, c_override=c, minimize_override=True)
        if rmin.status is SolveStatus.INFEASIBLE:
            raise ValueError("input domain polytope is empty")
        rmax = solve_lp(base, c_override=c, minimize_override=False)
        lo[k] = rmin.objective if rmin.optimal else -INF
        hi[k] = rmax.objective if rmax.optimal else INF
    return lo, hi


@dataclass(frozen=True)
class BoxBounds:
    """Elementwise bounds on the decision variables; +/-INF marks free sides."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.size != hi.size:
            raise ValueError("bound vectors must have equal length")
        if np.any(lo > hi):
            raise ValueError("BoxBounds requires lower <= upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim_n(self) -> int:
        return self.lower.size

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


@dataclass(frozen=True)
class LinearConstraintSet:
    """Rows ``a_j @ x + b_j @ theta <= e_j``; zero limits are rejected."""

    a: np.ndarray  # (E, N)
    b: np.ndarray  # (E, M)
    e: np.ndarray  # (E,)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        e = np.asarray(self.e, dtype=float).ravel()
        if a.shape[0] != e.size or b.shape[0] != e.size:
            raise ValueError("constraint row counts must agree")
        if np.any(e == 0.0):
            raise ZeroLimitError(
                "constraint limits of exactly 0 are not representable; "
                "shift the row by an auxiliary constant before construction"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "e", e)

    @property
    def n_rows(self) -> int:
        return self.e.size

    def values(self, x, theta) -> np.ndarray:
        """g_j(x, theta) for every row."""
        return self.a @ np.asarray(x, dtype=float) + self.b @ np.asarray(theta, dtype=float)

    def subset(self, idx) -> "LinearConstraintSet":
        idx = np.asarray(idx, dtype=int)
        return LinearConstraintSet(self.a[idx], self.b[idx], self.e[idx])


@dataclass(frozen=True)
class QuadraticObjective:
    """f(x, theta) = 0.5 x'Qx + (d + R theta)'x; R couples inputs into the
    linear term (arises when equality elimination folds theta into the cost)."""

    q: np.ndarray
    d: np.ndarray
    input_coupling: np.ndarray | None = None

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q, dtype=float))
        d = np.asarray(self.d, dtype=float).ravel()
        if q.shape[0] != q.shape[1] or q.shape[0] != d.size:
            raise ValueError("Q must be square and match d")
        if not np.allclose(q, q.T, atol=1e-10):
            raise ValueError("Q must be symmetric")
        if q.size and np.min(np.linalg.eigvalsh(q)) < -1e-8:
            raise ValueError("Q must be positive semidefinite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "d", d)
        if self.input_coupling is not None:
            r = np.atleast_2d(np.asarray(self.input_coupling, dtype=float))
            if r.shape[0] != d.size:
                raise ValueError("input coupling must have N rows")
            object.__setattr__(self, "input_coupling", r)

    def linear_term(self, theta) -> np.ndarray:
        if self.input_coupling is None:
            return self.d
        return self.d + self.input_coupling @ np.asarray(theta, dtype=float)

    def value(self, x, theta) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.q @ x + self.linear_term(theta) @ x)


@dataclass(frozen=True)
class LinearObjective:
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float).ravel())

    def value(self, x, theta) -> float:
        return float(self.c @ np.asarray(x, dtype=float))


@dataclass(frozen=True)
class OplcProblem:
    """Linearly constrained parametric problem over box-bounded decisions."""

    objective: QuadraticObjective | LinearObjective
    constraints: LinearConstraintSet
    box: BoxBounds
    domain: InputDomain

    def __post_init__(self):
        n, m = self.box.dim_n, self.domain.dim_m
        if self.constraints.a.shape[1] != n:
            raise ValueError("constraint x-coefficients must have N columns")
        if self.constraints.b.shape[1] != m:
            raise ValueError("constraint theta-coefficients must have M columns")
        if isinstance(self.objective, QuadraticObjective):
            if self.objective.d.size != n:
                raise ValueError("objective dimension must equal N")
            r = self.objective.input_coupling
            if r is not None and r.shape[1] != m:
                raise ValueError("input coupling must have M columns")
        elif self.objective.c.size != n:
            raise ValueError("objective dimension must equal N")

    @property
    def dim_n(self) -> int:
        return self.box.dim_n

    @property
    def dim_m(self) -> int:
        return self.domain.dim_m

    @property
    def n_constraints(self) -> int:
        return self.constraints.n_rows

    def with_constraints(self, constraints: LinearConstraintSet) -> "OplcProblem":
        return OplcProblem(self.objective, constraints, self.box, self.domain)


@dataclass(frozen=True)
class CalibratedLimits:
    """Tightened limits e_hat and the rates that produced them."""

    eta: np.ndarray
    e_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eta", np.asarray(self.eta, dtype=float).ravel())
        object.__setattr__(self, "e_hat", np.asarray(self.e_hat, dtype=float).ravel())
        if self.eta.size != self.e_hat.size:
            raise ValueError("eta and e_hat must have equal length")


def calibrate_limits(e, eta) -> CalibratedLimits:
    """Tighten each limit by its rate: e*(1-eta) for e >= 0, e*(1+eta) otherwise.

    Either way |e_hat| = |e|*(1-eta), so the sign of the limit is preserved
    for rates below 1.
    """
    e = np.asarray(e, dtype=float).ravel()
    eta = np.asarray(eta, dtype=float).ravel()
    if eta.size == 1 and e.size > 1:
        eta = np.full(e.size, eta[0])
    if eta.size != e.size:
        raise ValueError("eta must be scalar or match e in length")
    if np.any(eta < 0.0) or np.any(eta >= 1.0):
        raise ValueError("calibration rates must lie in [0, 1)")
    if np.any(e == 0.0):
        raise ZeroLimitError("cannot calibrate a zero limit; pre-shift the row")
    e_hat = np.where(e >= 0.0, e * (1.0 - eta), e * (1.0 + eta))
    return CalibratedLimits(eta=eta, e_hat=e_hat)


def uniform_calibration(problem: OplcProblem, rate: float) -> CalibratedLimits:
    return calibrate_limits(problem.constraints.e, np.full(problem.n_constraints, float(rate)))


def residuals(problem: OplcProblem, x, theta) -> np.ndarray:
    """g_j(x, theta) - e_j per row; x is feasible iff all <= 0 and x in box."""
    x = np.asarray(x, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    if x.size != problem.dim_n or theta.size != problem.dim_m:
        raise ValueError("dimension mismatch in residual evaluation")
    return problem.constraints.values(x, theta) - problem.constraints.e


def min_relative_redundancy(problem: OplcProblem, x, theta) -> float:
    """min_j (e_j - g_j(x, theta)) / |e_j| — the inner calibration objective at a point.

    Nonnegative iff the point is feasible; >= eta iff it stays feasible after
    a uniform calibration by eta.
    """
    res = residuals(problem, x, theta)
    return float(np.min(-res / np.abs(problem.constraints.e)))


def is_feasible(
    problem: OplcProblem,
    x,
    theta,
    limits: np.ndarray | None = None,
    config: NumericConfig = DEFAULT_CONFIG,
) -> bool:
    """Feasibility of x w.r.t. the box and (optionally calibrated) row limits."""
    e = problem.constraints.e if limits is None else np.asarray(limits, dtype=float)
    g = problem.constraints.values(x, theta)
    return bool(
        np.all(g <= e + config.feasibility_tol)
        and problem.box.contains(x, config.feasibility_tol)
    )


# -- JSON round trip ---------------------------------------------------------
#
# Python float repr is shortest-round-trip, so dumping plain lists keeps all
# finite doubles exact.

def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def problem_to_dict(problem: OplcProblem) -> dict:
    if isinstance(problem.objective, QuadraticObjective):
        obj = {"kind": "quadratic", "q": _arr(problem.objective.q), "d": _arr(problem.objective.d)}
        if problem.objective.input_coupling is not None:
            obj["input_coupling"] = _arr(problem.objective.input_coupling)
    else:
        obj = {"kind": "linear", "c": _arr(problem.objective.c)}
    return {
        "objective": obj,
        "constraints": {
            "a": _arr(problem.constraints.a),
            "b": _arr(problem.constraints.b),
            "e": _arr(problem.constraints.e),
        },
        "box": {"lower": _arr(problem.box.lower), "upper": _arr(problem.box.upper)},
        "domain": {
            "a_theta": _arr(problem.domain.a_theta),
            "b_theta": _arr(problem.domain.b_theta),
        },
    }


def problem_from_dict(data: dict) -> OplcProblem:
    obj = data["objective"]
    if obj["kind"] == "quadratic":
        objective = QuadraticObjective(
            np.array(obj["q"]), np.array(obj["d"]),
            np.array(obj["input_coupling"]) if "input_coupling" in obj else None,
        )
    else:
        objective = LinearObjective(np.array(obj["c"]))
    cons = data["constraints"]
    dom = data["domain"]
    return OplcProblem(
        objective=objective,
        constraints=LinearConstraintSet(np.array(cons["a"]), np.array(cons["b"]), np.array(cons["e"])),
        box=BoxBounds(np.array(data["box"]["lower"]), np.array(data["box"]["upper"])),
        domain=InputDomain(np.array(dom["a_theta"]), np.array(dom["b_theta"])),
    )


def problem_to_json(problem: OplcProblem) -> str:
    return json.dumps(problem_to_dict(problem), indent=1)


def problem_from_json(text: str) -> OplcProblem:
    return problem_from_dict(json.loads(text))
