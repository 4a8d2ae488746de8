"""Constraint criticality screening and equality elimination.

A row is critical when some combination of a box-feasible ``x`` and a domain
input ``theta`` can make it active; every other row can be dropped without
changing the feasible set.  Equality constraints are eliminated by solving a
pivot block for the dependent variables, leaving a problem over independents
plus an exact affine reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from feasnet.config import DEFAULT_CONFIG, INF, NumericConfig, is_free
from feasnet.lp import LESS, LpProblem, solve_lp
from feasnet.problem import (
    BoxBounds,
    InputDomain,
    LinearConstraintSet,
    LinearObjective,
    OplcProblem,
    QuadraticObjective,
    ZeroLimitError,
)


@dataclass(frozen=True)
class CriticalityReport:
    max_excess: np.ndarray      # per row: max over box x D of g_j - e_j
    critical: np.ndarray        # bool mask, max_excess > feasibility tol
    tol: float

    @property
    def critical_set(self) -> np.ndarray:
        return np.where(self.critical)[0]

    @property
    def noncritical_set(self) -> np.ndarray:
        return np.where(~self.critical)[0]

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "rows": [
                {"index": int(i), "max_excess": float(self.max_excess[i]),
                 "critical": bool(self.critical[i])}
                for i in range(self.max_excess.size)
            ],
        }


def _box_domain_lp(problem: OplcProblem) -> LpProblem:
    """LP skeleton over (x, theta) with box bounds and domain rows."""
    n, m = problem.dim_n, problem.dim_m
    dom = problem.domain
    rows = []
    for i in range(dom.a_theta.shape[0]):
        coeffs = np.concatenate([np.zeros(n), dom.a_theta[i]])
        rows.append((coeffs, LESS, dom.b_theta[i]))
    bounds = list(zip(problem.box.lower, problem.box.upper)) + list(
        zip(dom.bounding_lo, dom.bounding_hi)
    )
    return LpProblem.from_rows(np.zeros(n + m), rows, bounds)


def find_critical(
    problem: OplcProblem,
    config: NumericConfig = DEFAULT_CONFIG,
) -> CriticalityReport:
    """One LP per row: maximize its excess g_j - e_j over box x D."""
    lp = _box_domain_lp(problem)
    cons = problem.constraints
    n = problem.dim_n
    excess = np.empty(cons.n_rows)
    for j in range(cons.n_rows):
        c = np.concatenate([cons.a[j], cons.b[j]])
        res = solve_lp(lp, config, c_override=c, minimize_override=False)
        if not res.optimal:
            raise RuntimeError(f"criticality LP for row {j} returned {res.status}")
        excess[j] = res.objective - cons.e[j]
    return CriticalityReport(excess, excess > config.feasibility_tol, config.feasibility_tol)


def drop_noncritical(problem: OplcProblem, report: CriticalityReport) -> OplcProblem:
    """Restrict the problem to critical rows; the report keeps the audit mask."""
    if report.max_excess.size != problem.n_constraints:
        raise ValueError("report does not match the problem's row count")
    return problem.with_constraints(problem.constraints.subset(report.critical_set))


@dataclass(frozen=True)
class AffineReconstruction:
    """x_full = T x_ind + U theta + v, with dependents solved from equalities."""

    ind_idx: np.ndarray
    dep_idx: np.ndarray
    t_matrix: np.ndarray
    u_matrix: np.ndarray
    v_vector: np.ndarray
    condition_number: float

    def apply(self, x_ind, theta) -> np.ndarray:
        x_ind = np.asarray(x_ind, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return self.t_matrix @ x_ind + self.u_matrix @ theta + self.v_vector


class SingularPivotError(ValueError):
    """The chosen pivot block is (near) singular; pick different pivots."""


def _greedy_pivots(a_eq: np.ndarray) -> list[int]:
    """Columns chosen by elimination with complete pivoting (max |pivot|)."""
    work = a_eq.astype(float).copy()
    p, n = work.shape
    used_rows: list[int] = []
    cols: list[int] = []
    for _ in range(p):
        mask = np.ones(work.shape, dtype=bool)
        mask[used_rows, :] = False
        mask[:, cols] = False
        cand = np.where(mask, np.abs(work), -1.0)
        r, c = np.unravel_index(np.argmax(cand), work.shape)
        if cand[r, c] <= 0.0:
            raise SingularPivotError("equality block is rank deficient")
        used_rows.append(int(r))
        cols.append(int(c))
        for rr in range(p):
            if rr != r and work[rr, c] != 0.0:
                work[rr] -= work[rr, c] / work[r, c] * work[r]
    return cols


def eliminate_equalities(
    a_eq: np.ndarray,
    rhs_theta: np.ndarray,
    rhs_const: np.ndarray,
    problem: OplcProblem,
    pivots: list[int] | None = None,
) -> tuple[OplcProblem, AffineReconstruction]:
    """Remove ``a_eq @ x = rhs_theta @ theta + rhs_const`` from the problem.

    The pivot (dependent) columns are chosen greedily by largest pivot unless
    given explicitly.  Substituted rows whose limit becomes exactly 0 raise
    ZeroLimitError: shift those constraints first.  Finite box bounds of
    dependent variables turn into ordinary constraint rows.
    """
    a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
    p, n_full = a_eq.shape
    rhs_theta = np.asarray(rhs_theta, dtype=float).reshape(p, -1)
    rhs_const = np.asarray(rhs_const, dtype=float).ravel()
    if n_full != problem.dim_n:
        raise ValueError("equality block must cover the problem's variables")
    dep = list(pivots) if pivots is not None else _greedy_pivots(a_eq)
    if len(dep) != p or len(set(dep)) != p:
        raise ValueError("need exactly one distinct pivot column per equality")
    ind = [j for j in range(n_full) if j not in set(dep)]

    a1 = a_eq[:, dep]
    a2 = a_eq[:, ind]
    cond = float(np.linalg.cond(a1))
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularPivotError(f"pivot block condition number {cond:.3g}")
    # x_dep = A1^-1 (rhs_theta theta + rhs_const) - A1^-1 A2 x_ind
    p_mat = -np.linalg.solve(a1, a2)
    r_mat = np.linalg.solve(a1, rhs_theta)
    s_vec = np.linalg.solve(a1, rhs_const)

    n_ind = len(ind)
    m = problem.dim_m
    t_matrix = np.zeros((n_full, n_ind))
    u_matrix = np.zeros((n_full, m))
    v_vector = np.zeros(n_full)
    for pos, j in enumerate(ind):
        t_matrix[j, pos] = 1.0
    t_matrix[dep, :] = p_mat
    u_matrix[dep, :] = r_mat
    v_vector[dep] = s_vec

    cons = problem.constraints
    new_a = [cons.a @ t_matrix]
    new_b = [cons.b + cons.a @ u_matrix]
    new_e = [cons.e - cons.a @ v_vector]
    # dependents' finite box sides become general rows
    for pos, j in enumerate(dep):
        row_a = p_mat[pos]
        row_b = r_mat[pos]
        if not is_free(problem.box.upper[j]):
            new_a.append(row_a[None, :])
            new_b.append(row_b[None, :])
            new_e.append(np.array([problem.box.upper[j] - s_vec[pos]]))
        if not is_free(problem.box.lower[j]):
            new_a.append(-row_a[None, :])
            new_b.append(-row_b[None, :])
            new_e.append(np.array([s_vec[pos] - problem.box.lower[j]]))
    a_red = np.vstack(new_a)
    b_red = np.vstack(new_b)
    e_red = np.concatenate(new_e)
    if np.any(e_red == 0.0):
        raise ZeroLimitError(
            "substitution produced a zero limit; shift the affected row first"
        )

    if isinstance(problem.objective, QuadraticObjective):
        q, d = problem.objective.q, problem.objective.d
        r_prev = problem.objective.input_coupling
        q_red = t_matrix.T @ q @ t_matrix
        q_red = (q_red + q_red.T) / 2
        d_red = t_matrix.T @ (q @ v_vector + d)
        r_red = t_matrix.T @ q @ u_matrix
        if r_prev is not None:
            r_red = r_red + t_matrix.T @ r_prev
        if not np.any(r_red):
            r_red = None
        objective = QuadraticObjective(q_red, d_red, r_red)
    else:
        objective = LinearObjective(t_matrix.T @ problem.objective.c)

    reduced = OplcProblem(
        objective=objective,
        constraints=LinearConstraintSet(a_red, b_red, e_red),
        box=BoxBounds(problem.box.lower[ind], problem.box.upper[ind]),
        domain=problem.domain,
    )
    rec = AffineReconstruction(
        ind_idx=np.array(ind), dep_idx=np.array(dep),
        t_matrix=t_matrix, u_matrix=u_matrix, v_vector=v_vector,
        condition_number=cond,
    )
    return reduced, rec
