"""Dense linear programming layer.

One carrier type (:class:`LpProblem`) holds every LP subproblem in the
package: neuron-bound LPs, criticality sweeps, branch-and-bound relaxations,
and feasibility checks.  Solves are delegated to scipy's HiGHS backend behind
the stable :func:`solve_lp` contract: status-correct results, duals in the
``d(objective)/d(rhs)`` convention of the stated sense, and bit-identical
output for identical input.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from feasnet.config import DEFAULT_CONFIG, INF, NumericConfig, is_free

LESS, EQUAL, GREATER = "<", "=", ">"


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"
    MAX_ITER = "max_iter"


class LpError(RuntimeError):
    """Raised when the backend reports numerical failure."""


@dataclass
class LpProblem:
    """min/max ``c @ x`` s.t. rows ``a_i @ x (<=|=|>=) rhs_i`` and ``lo <= x <= hi``.

    Bounds use the +/-INF sentinel for free directions.
    """

    c: np.ndarray
    a: np.ndarray        # (n_rows, n_vars); may be empty with shape (0, n_vars)
    senses: list[str]
    rhs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    minimize: bool = True
    _split: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.a = np.asarray(self.a, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float).ravel()
        self.lo = np.asarray(self.lo, dtype=float).ravel()
        self.hi = np.asarray(self.hi, dtype=float).ravel()
        if len(self.senses) != self.a.shape[0] or self.rhs.size != self.a.shape[0]:
            raise ValueError("row count mismatch between a, senses and rhs")
        if self.lo.size != n or self.hi.size != n:
            raise ValueError("bound length must equal variable count")
        bad = [s for s in self.senses if s not in (LESS, EQUAL, GREATER)]
        if bad:
            raise ValueError(f"unknown senses {bad}")

    @classmethod
    def from_rows(cls, c, rows, var_bounds, minimize=True) -> "LpProblem":
        """Build from ``rows = [(coeffs, sense, rhs), ...]`` and ``var_bounds = [(lo, hi), ...]``."""
        c = np.asarray(c, dtype=float)
        n = c.size
        if rows:
            a = np.array([np.asarray(r[0], dtype=float) for r in rows])
            senses = [r[1] for r in rows]
            rhs = np.array([float(r[2]) for r in rows])
        else:
            a, senses, rhs = np.zeros((0, n)), [], np.zeros(0)
        lo = np.array([b[0] if b[0] is not None else -INF for b in var_bounds], dtype=float)
        hi = np.array([b[1] if b[1] is not None else INF for b in var_bounds], dtype=float)
        return cls(c, a, senses, rhs, lo, hi, minimize)

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.a.shape[0]

    def split(self):
        """Cache the (A_ub, b_ub, A_eq, b_eq, ub_idx, ub_sign, eq_idx) view."""
        if self._split is None:
            senses = np.array(self.senses)
            le = np.where(senses == LESS)[0]
            ge = np.where(senses == GREATER)[0]
            eq = np.where(senses == EQUAL)[0]
            ub_idx = np.concatenate([le, ge]).astype(int)
            ub_sign = np.concatenate([np.ones(le.size), -np.ones(ge.size)])
            a_ub = np.vstack([self.a[le], -self.a[ge]]) if ub_idx.size else np.zeros((0, self.n_vars))
            b_ub = np.concatenate([self.rhs[le], -self.rhs[ge]])
            a_eq = self.a[eq] if eq.size else None
            b_eq = self.rhs[eq] if eq.size else None
            self._split = (a_ub, b_ub, a_eq, b_eq, ub_idx, ub_sign, eq)
        return self._split

    def residual_violation(self, x: np.ndarray) -> float:
        """Largest constraint violation of ``x`` (rows and bounds)."""
        worst = 0.0
        if self.n_rows:
            ax = self.a @ x
            for i, s in enumerate(self.senses):
                if s == LESS:
                    worst = max(worst, ax[i] - self.rhs[i])
                elif s == GREATER:
                    worst = max(worst, self.rhs[i] - ax[i])
                else:
                    worst = max(worst, abs(ax[i] - self.rhs[i]))
        worst = max(worst, float(np.max(self.lo - x, initial=0.0)))
        worst = max(worst, float(np.max(x - self.hi, initial=0.0)))
        return worst


@dataclass
class SolveResult:
    status: SolveStatus
    x: np.ndarray | None
    objective: float
    duals: np.ndarray | None = None
    lower_duals: np.ndarray | None = None
    upper_duals: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


_STATUS_MAP = {
    0: SolveStatus.OPTIMAL,
    1: SolveStatus.ITER_LIMIT,
    2: SolveStatus.INFEASIBLE,
    3: SolveStatus.UNBOUNDED,
}


def solve_lp(
    problem: LpProblem,
    config: NumericConfig = DEFAULT_CONFIG,
    c_override: np.ndarray | None = None,
    bounds_override: tuple[np.ndarray, np.ndarray] | None = None,
    minimize_override: bool | None = None,
) -> SolveResult:
    """Solve an LP; overrides reuse the cached row split for repeated solves.

    ``c_override`` swaps the objective vector, ``bounds_override`` the variable
    bounds, without touching the shared constraint matrix.
    """
    a_ub, b_ub, a_eq, b_eq, ub_idx, ub_sign, eq_idx = problem.split()
    minimize = problem.minimize if minimize_override is None else minimize_override
    c = problem.c if c_override is None else np.asarray(c_override, dtype=float)
    sign = 1.0 if minimize else -1.0
    lo, hi = (problem.lo, problem.hi) if bounds_override is None else bounds_override
    bounds = [
        (None if is_free(l) and l < 0 else l, None if is_free(h) and h > 0 else h)
        for l, h in zip(lo, hi)
    ]
    res = linprog(
        sign * c,
        A_ub=a_ub if a_ub.shape[0] else None,
        b_ub=b_ub if a_ub.shape[0] else None,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    if res.status == 4:
        raise LpError(f"LP backend failure: {res.message}")
    status = _STATUS_MAP[res.status]
    if status is not SolveStatus.OPTIMAL:
        return SolveResult(status, None, float("nan"), iterations=int(res.nit))

    duals = np.zeros(problem.n_rows)
    if ub_idx.size:
        duals[ub_idx] = ub_sign * res.ineqlin.marginals
    if eq_idx.size:
        duals[eq_idx] = res.eqlin.marginals
    return SolveResult(
        status=status,
        x=np.asarray(res.x, dtype=float),
        objective=sign * float(res.fun),
        duals=sign * duals,
        lower_duals=sign * np.asarray(res.lower.marginals, dtype=float),
        upper_duals=sign * np.asarray(res.upper.marginals, dtype=float),
        iterations=int(res.nit),
    )


def lp_value_range(
    problem: LpProblem,
    coeffs: np.ndarray,
    config: NumericConfig = DEFAULT_CONFIG,
) -> tuple[float, float]:
    """Certified [min, max] of ``coeffs @ x`` over the LP's feasible set."""
    lo = solve_lp(problem, config, c_override=coeffs, minimize_override=True)
    hi = solve_lp(problem, config, c_override=coeffs, minimize_override=False)
    if not (lo.optimal and hi.optimal):
        raise LpError(f"value-range LP not optimal: {lo.status}, {hi.status}")
    return lo.objective, hi.objective
