"""Convex QP solver: operator splitting with an active-set polish.

Solves ``min 0.5 x'Qx + d'x`` over linear rows and variable bounds.  The
splitting iteration (fixed penalty, no adaptive scaling) is robust at the
problem sizes used here; the polish step re-solves the equality-constrained
KKT system on the detected active set to recover solver-grade accuracy, which
matters because these solutions become training labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from feasnet.config import DEFAULT_CONFIG, INF, NumericConfig
from feasnet.lp import (
    EQUAL,
    GREATER,
    LESS,
    LpProblem,
    SolveResult,
    SolveStatus,
    solve_lp,
)

RHO_ADMM = 1.0
SIGMA = 1e-6
ADMM_TOL = 1e-8
MAX_ADMM_ITER = 20000


@dataclass
class _Stacked:
    """Constraints in two-sided form l <= A x <= u (rows then variable bounds)."""

    a: np.ndarray
    l: np.ndarray
    u: np.ndarray
    n_rows: int  # original rows before the bound block


def _stack(rows, var_bounds, n: int) -> _Stacked:
    mats, los, his = [], [], []
    for coeffs, sense, rhs in rows:
        mats.append(np.asarray(coeffs, dtype=float))
        if sense == LESS:
            los.append(-INF)
            his.append(float(rhs))
        elif sense == GREATER:
            los.append(float(rhs))
            his.append(INF)
        elif sense == EQUAL:
            los.append(float(rhs))
            his.append(float(rhs))
        else:
            raise ValueError(f"unknown sense {sense!r}")
    n_rows = len(mats)
    eye = np.eye(n)
    for k, (lo, hi) in enumerate(var_bounds):
        mats.append(eye[k])
        los.append(-INF if lo is None else float(lo))
        his.append(INF if hi is None else float(hi))
    return _Stacked(np.array(mats), np.array(los), np.array(his), n_rows)


def solve_qp(
    q: np.ndarray,
    d: np.ndarray,
    rows,
    var_bounds,
    config: NumericConfig = DEFAULT_CONFIG,
) -> SolveResult:
    """Minimize 0.5 x'Qx + d'x s.t. ``rows`` and ``var_bounds``.

    Q must be symmetric PSD; with Q positive definite the minimizer is unique.
    Returns OPTIMAL with KKT residual below tolerance, INFEASIBLE when the
    polyhedron is empty, or MAX_ITER when the splitting iteration stalls.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    d = np.asarray(d, dtype=float).ravel()
    n = d.size

    # An LP feasibility probe settles emptiness up front, so the splitting
    # loop only ever runs on feasible data.
    probe = solve_lp(LpProblem.from_rows(np.zeros(n), rows, var_bounds), config)
    if probe.status is SolveStatus.INFEASIBLE:
        return SolveResult(SolveStatus.INFEASIBLE, None, float("nan"))

    st = _stack(rows, var_bounds, n)
    m = st.a.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = q + SIGMA * np.eye(n)
    kkt[:n, n:] = st.a.T
    kkt[n:, :n] = st.a
    kkt[n:, n:] = -np.eye(m) / RHO_ADMM
    lu, piv = scipy.linalg.lu_factor(kkt)

    x = np.zeros(n)
    z = np.clip(np.zeros(m), st.l, st.u)
    y = np.zeros(m)
    converged = False
    for _ in range(MAX_ADMM_ITER):
        rhs = np.concatenate([SIGMA * x - d, z - y / RHO_ADMM])
        sol = scipy.linalg.lu_solve((lu, piv), rhs)
        x = sol[:n]
        zt = z + (sol[n:] - y) / RHO_ADMM
        z = np.clip(zt + y / RHO_ADMM, st.l, st.u)
        y = y + RHO_ADMM * (zt - z)
        r_prim = np.max(np.abs(st.a @ x - z), initial=0.0)
        r_dual = np.max(np.abs(q @ x + d + st.a.T @ y), initial=0.0)
        if r_prim <= ADMM_TOL and r_dual <= ADMM_TOL:
            converged = True
            break

    x_pol, y_pol = _polish(q, d, st, x, y, config)
    if x_pol is not None:
        x, y = x_pol, y_pol
        converged = True
    if not converged:
        return SolveResult(SolveStatus.MAX_ITER, x, _qp_value(q, d, x))

    duals = y[: st.n_rows]
    lower = np.maximum(-y[st.n_rows :], 0.0)
    upper = np.maximum(y[st.n_rows :], 0.0)
    return SolveResult(
        SolveStatus.OPTIMAL,
        x,
        _qp_value(q, d, x),
        duals=duals,
        lower_duals=lower,
        upper_duals=upper,
    )


def _qp_value(q, d, x) -> float:
    return float(0.5 * x @ q @ x + d @ x)


def _polish(q, d, st: _Stacked, x, y, config: NumericConfig):
    """Equality-solve the KKT system on the detected active set.

    Accepts the polished point only when it is primal feasible, has
    sign-correct multipliers, and satisfies stationarity tightly.
    """
    n = x.size
    ax = st.a @ x
    tol_act = 1e-6
    low_act = np.where((ax - st.l <= tol_act) | (y < -tol_act))[0]
    up_act = np.where((st.u - ax <= tol_act) | (y > tol_act))[0]
    act = np.unique(np.concatenate([low_act, up_act]))
    if act.size:
        a_act = st.a[act]
        # equalities sit on l == u; others polish to the nearer bound
        target = np.where(np.abs(ax[act] - st.l[act]) <= np.abs(st.u[act] - ax[act]),
                          st.l[act], st.u[act])
        target = np.where(st.l[act] == st.u[act], st.l[act], target)
        kkt = np.zeros((n + act.size, n + act.size))
        kkt[:n, :n] = q
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
        rhs = np.concatenate([-d, target])
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        x_new = sol[:n]
        y_new = np.zeros(st.a.shape[0])
        y_new[act] = sol[n:]
    else:
        try:
            x_new = np.linalg.solve(q, -d)
        except np.linalg.LinAlgError:
            return None, None
        y_new = np.zeros(st.a.shape[0])

    ax_new = st.a @ x_new
    feas = np.all(ax_new >= st.l - 1e-7) and np.all(ax_new <= st.u + 1e-7)
    free = st.l < st.u
    sign_ok = np.all(y_new[free & (np.abs(ax_new - st.l) > 1e-6)] >= -1e-7) and np.all(
        y_new[free & (np.abs(st.u - ax_new) > 1e-6)] <= 1e-7
    )
    stat = np.max(np.abs(q @ x_new + d + st.a.T @ y_new), initial=0.0)
    if feas and sign_ok and stat <= 1e-6:
        return x_new, y_new
    return None, None


def kkt_residual(q, d, rows, var_bounds, result: SolveResult) -> float:
    """Stationarity norm of an OPTIMAL result; used as a post-solve audit."""
    st = _stack(rows, var_bounds, np.asarray(d).size)
    y = np.concatenate([result.duals, result.upper_duals - result.lower_duals])
    return float(np.max(np.abs(np.atleast_2d(q) @ result.x + np.asarray(d) + st.a.T @ y), initial=0.0))
