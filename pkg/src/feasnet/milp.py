"""Branch-and-bound over the LP layer.

Early termination keeps the bound semantics needed downstream: on a node or
time limit the returned ``best_bound`` is always a valid relaxation bound and
any incumbent is a checked feasible point, so an interrupted minimization
yields a value no larger than the optimum (and an interrupted maximization no
smaller).  The node loop is deterministic: best-bound-first selection with a
fixed tie break, branching on the most fractional binary, lowest index first.
"""

from __future__ import annotations

import enum
import heapq
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from feasnet.config import DEFAULT_CONFIG, NumericConfig
from feasnet.lp import LpProblem, SolveResult, SolveStatus, solve_lp


class MilpError(RuntimeError):
    pass


class MilpStatus(enum.Enum):
    PROVEN = "proven"
    INCUMBENT_ONLY = "incumbent_only"
    BOUND_ONLY = "bound_only"
    INFEASIBLE = "infeasible"


@dataclass
class BnbConfig:
    gap_tol: float = 1e-6          # absolute optimality gap for PROVEN
    node_limit: int = 200_000
    time_limit: float = 300.0
    parallel: bool = False         # evaluate sibling relaxations concurrently
    node_order: str = "best"       # "best" | "dfs" | "breadth"
    record_trace: bool = False
    numeric: NumericConfig = field(default_factory=NumericConfig)


@dataclass
class MilpModel:
    """An LP plus a set of binary variable indices and a big-M audit registry."""

    base: LpProblem
    binaries: list[int] = field(default_factory=list)
    big_m_registry: dict = field(default_factory=dict)
    warm_x: np.ndarray | None = None

    def __post_init__(self):
        self.binaries = sorted(int(b) for b in self.binaries)
        for b in self.binaries:
            if self.base.lo[b] < -1e-12 or self.base.hi[b] > 1.0 + 1e-12:
                raise MilpError(f"binary variable {b} must have bounds within [0, 1]")

    def check_feasible(self, x: np.ndarray, tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        if self.base.residual_violation(x) > tol:
            return False
        fr = np.abs(x[self.binaries] - np.round(x[self.binaries])) if self.binaries else np.zeros(0)
        return bool(np.all(fr <= tol))


@dataclass
class MilpResult:
    status: MilpStatus
    incumbent_x: np.ndarray | None
    incumbent_obj: float | None
    best_bound: float
    gap: float
    nodes: int
    trace: list = field(default_factory=list)

    @property
    def proven(self) -> bool:
        return self.status is MilpStatus.PROVEN


def warm_start(model: MilpModel, point: np.ndarray, tol: float = 1e-6) -> bool:
    """Install ``point`` as the initial incumbent; reject (False) if infeasible."""
    point = np.asarray(point, dtype=float)
    if point.size != model.base.n_vars or not model.check_feasible(point, tol):
        model.warm_x = None
        return False
    snapped = point.copy()
    if model.binaries:
        snapped[model.binaries] = np.round(snapped[model.binaries])
    if model.base.residual_violation(snapped) > tol:
        model.warm_x = None
        return False
    model.warm_x = snapped
    return True


@dataclass(order=True)
class _Node:
    key: tuple
    seq: int = field(compare=False)
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    depth: int = field(compare=False)
    relax: SolveResult | None = field(compare=False, default=None)
    bound: float = field(compare=False, default=-np.inf)


def _node_key(order: str, bound: float, depth: int, seq: int) -> tuple:
    if order == "best":
        return (bound, -depth, seq)
    if order == "dfs":
        return (-depth, bound, seq)
    if order == "breadth":
        return (depth, bound, seq)
    raise MilpError(f"unknown node order {order!r}")


def solve_milp(model: MilpModel, config: BnbConfig | None = None) -> MilpResult:
    """Minimize (or maximize) ``model.base`` over integral binaries.

    Maximization is handled by negating the objective at this boundary; all
    internal logic is minimization.
    """
    config = config or BnbConfig()
    base = model.base
    sign = 1.0 if base.minimize else -1.0
    c_int = sign * base.c
    start = time.monotonic()

    def out(v: float) -> float:
        return sign * v

    def lp(lo, hi) -> SolveResult:
        return solve_lp(base, config.numeric, c_override=c_int,
                        bounds_override=(lo, hi), minimize_override=True)

    if not model.binaries:
        res = lp(base.lo, base.hi)
        if res.status is SolveStatus.INFEASIBLE:
            return MilpResult(MilpStatus.INFEASIBLE, None, None, np.nan, np.inf, 1)
        if res.status is not SolveStatus.OPTIMAL:
            raise MilpError(f"LP relaxation not solvable: {res.status}")
        return MilpResult(MilpStatus.PROVEN, res.x, out(res.objective),
                          out(res.objective), 0.0, 1)

    inc_obj = np.inf
    inc_x = None
    if model.warm_x is not None:
        inc_obj = float(c_int @ model.warm_x)
        inc_x = model.warm_x.copy()

    nodes = 0
    trace: list = []
    min_cutoff = np.inf   # lowest bound discarded by the incumbent cutoff
    heap: list[_Node] = []
    seq = 0

    root = _Node(key=_node_key(config.node_order, -np.inf, 0, 0), seq=0,
                 lo=base.lo.copy(), hi=base.hi.copy(), depth=0)
    heapq.heappush(heap, root)
    pool = ThreadPoolExecutor(max_workers=2) if config.parallel else None

    def open_bound() -> float:
        vals = [n.bound for n in heap]
        vals.append(min_cutoff)
        if inc_x is not None:
            vals.append(inc_obj)
        return min(vals) if vals else inc_obj

    def finish(limited: bool) -> MilpResult:
        if pool is not None:
            pool.shutdown(wait=False)
        bound_int = open_bound()
        if inc_x is None:
            if not limited:
                return MilpResult(MilpStatus.INFEASIBLE, None, None, np.nan, np.inf, nodes, trace)
            return MilpResult(MilpStatus.BOUND_ONLY, None, None, out(bound_int), np.inf, nodes, trace)
        gap = max(inc_obj - bound_int, 0.0)
        status = MilpStatus.PROVEN if (not limited or gap <= config.gap_tol) else MilpStatus.INCUMBENT_ONLY
        if not model.check_feasible(inc_x, 1e-6):
            raise MilpError("incumbent failed the feasibility recheck")
        return MilpResult(status, inc_x, out(inc_obj), out(bound_int), gap, nodes, trace)

    while heap:
        if nodes >= config.node_limit or time.monotonic() - start > config.time_limit:
            return finish(limited=True)
        node = heapq.heappop(heap)
        if node.relax is None:
            node.relax = lp(node.lo, node.hi)
            nodes += 1
            if node.relax.status is SolveStatus.UNBOUNDED:
                raise MilpError("LP relaxation is unbounded")
        res = node.relax
        if res.status is SolveStatus.INFEASIBLE:
            continue
        bound = res.objective
        if bound >= inc_obj - config.gap_tol:
            min_cutoff = min(min_cutoff, bound)
            continue
        frac = np.abs(res.x[model.binaries] - np.round(res.x[model.binaries]))
        integral = np.max(frac) <= config.numeric.int_tol
        if integral:
            # big-M rows amplify even tolerance-level fractionality, so an
            # incumbent is only accepted from a re-solve with binaries pinned
            # to exact integers
            if np.max(frac) > 1e-12:
                lo_fix, hi_fix = node.lo.copy(), node.hi.copy()
                rounded = np.round(res.x[model.binaries])
                lo_fix[model.binaries] = rounded
                hi_fix[model.binaries] = rounded
                exact = lp(lo_fix, hi_fix)
                nodes += 1
                if exact.status is not SolveStatus.OPTIMAL:
                    integral = False  # pinned problem empty: branch instead
                else:
                    if exact.objective < inc_obj:
                        inc_obj, inc_x = exact.objective, exact.x.copy()
                    if config.record_trace:
                        trace.append((nodes, out(open_bound()), out(inc_obj)))
                    continue
            else:
                if bound < inc_obj:
                    inc_obj, inc_x = bound, res.x.copy()
                if config.record_trace:
                    trace.append((nodes, out(open_bound()), out(inc_obj)))
                continue
        # branch on the most fractional binary, lowest index on ties
        scores = np.abs(frac - 0.5)
        pick = int(np.argmin(scores))
        var = model.binaries[pick]
        children = []
        for val in (0.0, 1.0):
            lo, hi = node.lo.copy(), node.hi.copy()
            lo[var] = hi[var] = val
            seq += 1
            children.append(_Node(key=_node_key(config.node_order, bound, node.depth + 1, seq),
                                  seq=seq, lo=lo, hi=hi, depth=node.depth + 1, bound=bound))
        budget = config.node_limit - nodes
        solve_now = children[: max(0, budget)]
        if pool is not None and len(solve_now) == 2:
            relaxed = list(pool.map(lambda ch: lp(ch.lo, ch.hi), solve_now))
        else:
            relaxed = [lp(ch.lo, ch.hi) for ch in solve_now]
        for ch, r in zip(solve_now, relaxed):
            nodes += 1
            ch.relax = r
            if r.status is SolveStatus.OPTIMAL:
                ch.bound = r.objective
                ch.key = _node_key(config.node_order, ch.bound, ch.depth, ch.seq)
        for ch in children:
            if ch.relax is not None and ch.relax.status is SolveStatus.INFEASIBLE:
                continue
            heapq.heappush(heap, ch)
        if config.record_trace:
            trace.append((nodes, out(open_bound()), out(inc_obj) if inc_x is not None else None))

    return finish(limited=False)


class MilpBuilder:
    """Incremental variable/row collector that materializes an LpProblem.

    Rows are sparse dicts {var_index: coeff}; densification happens once at
    build time.
    """

    def __init__(self):
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.names: list[str] = []
        self.rows: list[tuple[dict, str, float]] = []
        self.binaries: list[int] = []

    @property
    def n_vars(self) -> int:
        return len(self.lo)

    def var(self, name: str, lo: float, hi: float, binary: bool = False) -> int:
        idx = self.n_vars
        self.names.append(name)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        if binary:
            self.binaries.append(idx)
        return idx

    def fix(self, idx: int, value: float) -> None:
        self.lo[idx] = self.hi[idx] = float(value)

    def row(self, coeffs: dict, sense: str, rhs: float) -> int:
        self.rows.append((dict(coeffs), sense, float(rhs)))
        return len(self.rows) - 1

    def build(self, objective: dict, minimize: bool, big_m_registry: dict | None = None) -> MilpModel:
        n = self.n_vars
        c = np.zeros(n)
        for idx, val in objective.items():
            c[idx] = val
        a = np.zeros((len(self.rows), n))
        senses, rhs = [], np.zeros(len(self.rows))
        for i, (coeffs, sense, r) in enumerate(self.rows):
            for idx, val in coeffs.items():
                a[i, idx] = val
            senses.append(sense)
            rhs[i] = r
        base = LpProblem(c, a, senses, rhs, np.array(self.lo), np.array(self.hi), minimize)
        return MilpModel(base=base, binaries=list(self.binaries),
                         big_m_registry=dict(big_m_registry or {}))


def write_lp_text(model: MilpModel) -> str:
    """Plain-text dump of a model for external cross-checking (write-only).

    Grammar: one objective line ``min|max: <terms>``, one line per row
    ``r<i>: <terms> <=|=|>= rhs``, a ``bounds`` block ``lo <= x<j> <= hi``,
    and a ``binary`` block listing binary variable names.  Terms are
    ``{+|-}coef x<j>`` joined by spaces; coefficients are repr'd floats.
    """
    base = model.base
    lines = []

    def terms(coeffs) -> str:
        parts = []
        for j, v in enumerate(coeffs):
            if v != 0.0:
                parts.append(f"{'+' if v >= 0 else '-'} {abs(v)!r} x{j}")
        return " ".join(parts) if parts else "0"

    lines.append(("min: " if base.minimize else "max: ") + terms(base.c))
    sense_txt = {"<": "<=", "=": "=", ">": ">="}
    for i in range(base.n_rows):
        lines.append(f"r{i}: {terms(base.a[i])} {sense_txt[base.senses[i]]} {base.rhs[i]!r}")
    lines.append("bounds")
    for j in range(base.n_vars):
        lines.append(f"{base.lo[j]!r} <= x{j} <= {base.hi[j]!r}")
    if model.binaries:
        lines.append("binary")
        lines.append(" ".join(f"x{j}" for j in model.binaries))
    lines.append("end")
    return "\n".join(lines) + "\n"
