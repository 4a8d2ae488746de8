"""Maximum calibration rate via a single-level mixed-integer reformulation.

The bi-level program (outer: worst input over the domain; inner: largest
uniform slack a feasible point can leave on every constraint) is flattened by
replacing the inner LP with its KKT conditions and rewriting complementary
slackness with binary indicator pairs (one binary per inequality: either the
multiplier or the slack is pinned to zero through a non-binding constant).
Minimizing the slack variable over that system yields the maximum uniform
rate; interrupting branch-and-bound still yields a valid (safe) lower bound
because the relaxation bound under-estimates a minimum.

The same machinery, with the inner objective swapped for a single row's
relative redundancy, computes the per-constraint extra rates of a minimal
supporting calibration region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from feasnet.config import DEFAULT_CONFIG, NumericConfig, is_free
from feasnet.lp import EQUAL, LESS, LpProblem, SolveStatus, solve_lp
from feasnet.milp import BnbConfig, MilpBuilder, MilpModel, MilpResult, MilpStatus, solve_milp
from feasnet.problem import (
    CalibratedLimits,
    InputDomain,
    OplcProblem,
    ZeroLimitError,
    calibrate_limits,
)

DUAL_BOUND = 1e4   # Fortuny-Amat constant for multipliers; audited post-solve


class CalibrationError(RuntimeError):
    pass


class DomainNotPreservedError(RuntimeError):
    def __init__(self, failures):
        self.failures = failures
        super().__init__(
            f"{len(failures)} sampled input(s) infeasible under the calibrated limits; "
            f"first: {failures[0]}"
        )


@dataclass
class CalibrationMilp:
    """The reformulated model plus variable index maps for extraction."""

    model: MilpModel
    theta_vars: list[int]
    x_vars: list[int]
    nu_var: int | None
    y_vars: list[int]
    pair_slack_bounds: np.ndarray
    objective_shift: float = 0.0

    def extract(self, sol: np.ndarray) -> dict:
        return {
            "theta": sol[self.theta_vars],
            "x": sol[self.x_vars],
            "nu": sol[self.nu_var] if self.nu_var is not None else None,
            "y": sol[self.y_vars],
        }


def _interval_min_max(coeffs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[float, float]:
    vals_lo = np.minimum(coeffs * lo, coeffs * hi)
    vals_hi = np.maximum(coeffs * lo, coeffs * hi)
    return float(np.sum(vals_lo)), float(np.sum(vals_hi))


def _kkt_milp(
    problem: OplcProblem,
    limits: np.ndarray,
    inner_x_coeffs: np.ndarray | None,
    outer_theta_coeffs: np.ndarray | None,
    include_nu: bool,
    restrict_to_supported: bool = False,
) -> CalibrationMilp:
    """Single-level MILP of  min_theta max_x  <inner objective>  s.t. rows/box.

    With ``include_nu`` the inner objective is the auxiliary slack variable
    itself (calibration-rate form: one redundancy row per constraint).
    Otherwise the inner objective is ``inner_x_coeffs @ x`` plus
    ``outer_theta_coeffs @ theta`` (handled in the MILP objective), which is
    the per-constraint form used for the minimal supporting region.
    """
    cons = problem.constraints
    n, m, n_rows = problem.dim_n, problem.dim_m, cons.n_rows
    if n_rows == 0:
        raise CalibrationError("calibration needs at least one constraint row")
    abs_e = np.abs(cons.e)
    dom = problem.domain
    box_lo, box_hi = problem.box.lower, problem.box.upper
    if any(is_free(v) for v in np.concatenate([box_lo, box_hi])):
        raise CalibrationError("the reformulation needs finite box bounds (bounded inner LP)")
    if any(is_free(v) for v in np.concatenate([dom.bounding_lo, dom.bounding_hi])):
        raise CalibrationError("the domain polytope must be bounded")

    b = MilpBuilder()
    theta = [b.var(f"theta{k}", dom.bounding_lo[k], dom.bounding_hi[k]) for k in range(m)]
    for i in range(dom.a_theta.shape[0]):
        b.row({theta[k]: dom.a_theta[i, k] for k in range(m) if dom.a_theta[i, k]},
              LESS, dom.b_theta[i])
    x = [b.var(f"x{k}", box_lo[k], box_hi[k]) for k in range(n)]

    # interval bounds on each row's relative redundancy over box x domain box
    red_lo = np.empty(n_rows)
    red_hi = np.empty(n_rows)
    for j in range(n_rows):
        gx_lo, gx_hi = _interval_min_max(cons.a[j], box_lo, box_hi)
        gt_lo, gt_hi = _interval_min_max(cons.b[j], dom.bounding_lo, dom.bounding_hi)
        red_lo[j] = (limits[j] - gx_hi - gt_hi) / abs_e[j]
        red_hi[j] = (limits[j] - gx_lo - gt_lo) / abs_e[j]

    nu = None
    if include_nu:
        nu = b.var("nu", float(np.min(red_lo)), float(np.min(red_hi)))

    y = [b.var(f"y{j}", 0.0, DUAL_BOUND) for j in range(n_rows)]
    mu_hi = {}
    mu_lo = {}
    for k in range(n):
        if not is_free(box_hi[k]):
            mu_hi[k] = b.var(f"mu_hi{k}", 0.0, DUAL_BOUND)
        if not is_free(box_lo[k]):
            mu_lo[k] = b.var(f"mu_lo{k}", 0.0, DUAL_BOUND)

    # primal feasibility of the inner problem
    for j in range(n_rows):
        coeffs = {x[k]: cons.a[j, k] for k in range(n) if cons.a[j, k]}
        for k in range(m):
            if cons.b[j, k]:
                coeffs[theta[k]] = coeffs.get(theta[k], 0.0) + cons.b[j, k]
        if include_nu:
            coeffs[nu] = abs_e[j]
        b.row(coeffs, LESS, limits[j])

    # stationarity: for inner "max c'x" the KKT system reads
    # sum_j y_j a_jk + mu_hi_k - mu_lo_k = c_k
    for k in range(n):
        coeffs = {y[j]: cons.a[j, k] for j in range(n_rows) if cons.a[j, k]}
        if k in mu_hi:
            coeffs[mu_hi[k]] = 1.0
        if k in mu_lo:
            coeffs[mu_lo[k]] = -1.0
        rhs = 0.0 if inner_x_coeffs is None else float(inner_x_coeffs[k])
        b.row(coeffs, EQUAL, rhs)
    if include_nu:
        b.row({y[j]: abs_e[j] for j in range(n_rows)}, EQUAL, 1.0)

    # complementary slackness, linearized pair by pair
    registry: dict = {}
    slack_bounds = []

    def pair(dual_var, slack_coeffs, slack_rhs, slack_cap, tag):
        r = b.var(f"r_{tag}", 0.0, 1.0, binary=True)
        b.row({dual_var: 1.0, r: DUAL_BOUND}, LESS, DUAL_BOUND)
        # slack <= r * cap  <=>  -(row expr) - cap*r <= -rhs
        coeffs = {v: -c for v, c in slack_coeffs.items()}
        coeffs[r] = -slack_cap
        b.row(coeffs, LESS, -slack_rhs)
        registry[f"pair_{tag}"] = slack_cap
        slack_bounds.append(slack_cap)

    for j in range(n_rows):
        coeffs = {x[k]: cons.a[j, k] for k in range(n) if cons.a[j, k]}
        for k in range(m):
            if cons.b[j, k]:
                coeffs[theta[k]] = coeffs.get(theta[k], 0.0) + cons.b[j, k]
        if include_nu:
            coeffs[nu] = abs_e[j]
        cap = abs_e[j] * (red_hi[j] - (np.min(red_lo) if include_nu else 0.0)) + abs_e[j]
        pair(y[j], coeffs, limits[j], max(cap, 1.0), f"row{j}")
    for k in range(n):
        span = box_hi[k] - box_lo[k]
        cap = span if np.isfinite(span) else DUAL_BOUND
        if k in mu_hi:
            pair(mu_hi[k], {x[k]: 1.0}, box_hi[k], cap, f"xhi{k}")
        if k in mu_lo:
            pair(mu_lo[k], {x[k]: -1.0}, -box_lo[k], cap, f"xlo{k}")

    if restrict_to_supported:
        # auxiliary witness point: theta must admit some feasible x under the
        # original limits (used when the domain polytope over-covers)
        aux = [b.var(f"aux_x{k}", box_lo[k], box_hi[k]) for k in range(n)]
        for j in range(n_rows):
            coeffs = {aux[k]: cons.a[j, k] for k in range(n) if cons.a[j, k]}
            for k in range(m):
                if cons.b[j, k]:
                    coeffs[theta[k]] = coeffs.get(theta[k], 0.0) + cons.b[j, k]
            b.row(coeffs, LESS, cons.e[j])

    if include_nu:
        objective = {nu: 1.0}
        shift = 0.0
    else:
        objective = {x[k]: float(inner_x_coeffs[k]) for k in range(n) if inner_x_coeffs[k]}
        for k in range(m):
            if outer_theta_coeffs is not None and outer_theta_coeffs[k]:
                objective[theta[k]] = objective.get(theta[k], 0.0) + float(outer_theta_coeffs[k])
        shift = 0.0
    model = b.build(objective, minimize=True, big_m_registry=registry)
    return CalibrationMilp(model, theta, x, nu, y, np.array(slack_bounds), shift)


def build_calibration_milp(
    problem: OplcProblem,
    restrict_to_supported: bool = False,
) -> CalibrationMilp:
    """MILP whose minimum is the maximum uniform calibration rate."""
    if np.any(problem.constraints.e == 0.0):
        raise ZeroLimitError("shift zero limits before calibration")
    return _kkt_milp(problem, problem.constraints.e, None, None, True,
                     restrict_to_supported)


@dataclass
class CalibrationResult:
    delta: float
    status: str                      # "proven" | "lower_bound"
    milp: MilpResult
    theta_star: np.ndarray | None
    audit: dict = field(default_factory=dict)
    per_constraint_extra: np.ndarray | None = None

    @property
    def proven(self) -> bool:
        return self.status == "proven"


def max_calibration_rate(
    problem: OplcProblem,
    bnb_config: BnbConfig | None = None,
    restrict_to_supported: bool = False,
) -> CalibrationResult:
    """Solve the calibration MILP; early termination degrades to a valid lower bound.

    The relaxation bound of an interrupted minimization under-estimates the
    optimum, so calibrating by the returned delta can never shrink the
    supported input domain.  Negative optima (domain not supported at all)
    clamp to 0.
    """
    cal = build_calibration_milp(problem, restrict_to_supported)
    res = solve_milp(cal.model, bnb_config)
    if res.status is MilpStatus.INFEASIBLE:
        raise CalibrationError("calibration MILP infeasible: domain empty or model inconsistent")
    audit = {}
    theta_star = None
    if res.incumbent_x is not None:
        parts = cal.extract(res.incumbent_x)
        theta_star = parts["theta"]
        audit = audit_kkt(cal, res.incumbent_x, problem)
    if res.proven:
        return CalibrationResult(max(0.0, res.incumbent_obj), "proven", res, theta_star, audit)
    bound = res.best_bound if np.isfinite(res.best_bound) else 0.0
    return CalibrationResult(max(0.0, bound), "lower_bound", res, theta_star, audit)


def audit_kkt(cal: CalibrationMilp, sol: np.ndarray, problem: OplcProblem) -> dict:
    """Post-solve certificate: complementary slackness and non-binding constants."""
    parts = cal.extract(sol)
    cons = problem.constraints
    g = cons.values(parts["x"], parts["theta"])
    slack = cons.e - g
    if parts["nu"] is not None:
        slack = slack - np.abs(cons.e) * parts["nu"]
    comp = np.abs(parts["y"] * slack)
    return {
        "max_complementarity_residual": float(np.max(comp, initial=0.0)),
        "dual_bound_binding": bool(np.any(parts["y"] > 0.99 * DUAL_BOUND)),
    }


def minimal_supporting_region(
    problem: OplcProblem,
    delta: float,
    bnb_config: BnbConfig | None = None,
) -> np.ndarray:
    """Per-constraint rates {delta + extra_j} forming one minimal supporting region.

    Constraints are processed in index order (the region is order-dependent
    and non-unique): each step asks how much additional slack row k can give
    up, given every earlier row already tightened, by solving the same
    KKT-reformulated bi-level program with the inner objective set to row k's
    relative redundancy.
    """
    cons = problem.constraints
    abs_e = np.abs(cons.e)
    rates = np.full(cons.n_rows, float(delta))
    for k in range(cons.n_rows):
        limits = calibrate_limits(cons.e, rates).e_hat
        inner = -cons.a[k] / abs_e[k]
        outer = -cons.b[k] / abs_e[k]
        cal = _kkt_milp(problem, limits, inner, outer, include_nu=False)
        res = solve_milp(cal.model, bnb_config)
        if res.status is not MilpStatus.PROVEN:
            raise CalibrationError(
                f"minimal-region step {k} not proven ({res.status}); partial rates: {rates}"
            )
        extra = res.incumbent_obj + limits[k] / abs_e[k]
        rates[k] += max(0.0, extra)
    return rates


def domain_box_corners(domain: InputDomain, cap: int = 4096) -> np.ndarray:
    """All bounding-box corners that lie inside the domain polytope."""
    m = domain.dim_m
    if 2**m > cap:
        raise ValueError(f"2^{m} corners exceed the cap {cap}")
    lo, hi = domain.bounding_lo, domain.bounding_hi
    corners = np.array(np.meshgrid(*[[lo[k], hi[k]] for k in range(m)])).T.reshape(-1, m)
    keep = [c for c in corners if domain.contains(c, 1e-9)]
    return np.array(keep)


def verify_domain_preserved(
    problem: OplcProblem,
    eta,
    n_samples: int,
    seed: int,
    extra_points: np.ndarray | None = None,
    config: NumericConfig = DEFAULT_CONFIG,
    raise_on_failure: bool = True,
) -> dict:
    """Feasibility LP sweep over sampled inputs under the calibrated limits.

    Samples uniformly over the domain (plus any supplied extra points, e.g.
    corners or a known binding input) and solves one feasibility LP each.
    """
    cons = problem.constraints
    eta_vec = np.full(cons.n_rows, eta) if np.isscalar(eta) else np.asarray(eta, dtype=float)
    limits = calibrate_limits(cons.e, eta_vec).e_hat
    rng = np.random.default_rng(seed)
    thetas = problem.domain.sample(n_samples, rng) if n_samples else np.zeros((0, problem.dim_m))
    if extra_points is not None and len(extra_points):
        thetas = np.vstack([np.atleast_2d(extra_points), thetas])
    lp = LpProblem.from_rows(
        np.zeros(problem.dim_n),
        [(cons.a[j], LESS, 0.0) for j in range(cons.n_rows)],
        list(zip(problem.box.lower, problem.box.upper)),
    )
    failures = []
    for theta in thetas:
        rhs = limits - cons.b @ theta
        shifted = LpProblem(lp.c, lp.a, list(lp.senses), rhs, lp.lo, lp.hi)
        res = solve_lp(shifted, config)
        if res.status is SolveStatus.INFEASIBLE:
            failures.append(theta)
    report = {
        "checked": int(thetas.shape[0]),
        "failures": failures,
        "all_feasible": not failures,
    }
    if failures and raise_on_failure:
        raise DomainNotPreservedError(failures)
    return report
