"""Exact mixed-integer encoding of the clamped ReLU network.

Each hidden neuron ``h = relu(pre)`` with certified pre-activation bounds
``[hmin, hmax]`` becomes four linear rows and one binary:

    h >= pre,  h >= 0,  h <= pre - hmin*(1 - z),  h <= hmax*z

and the two output clamp stages are encoded the same way through their own
per-output binaries.  Bounds come from layer-by-layer LPs over the relaxed
encoding (binaries continuous in [0, 1]), so every big-M constant is certified
rather than guessed.  On top of the network graph,
:func:`encode_max_violation` adds the worst-case relative-violation objective
with one selector binary per constraint row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from feasnet.config import DEFAULT_CONFIG, NumericConfig, is_free
from feasnet.lp import LESS, EQUAL, GREATER, LpProblem, solve_lp
from feasnet.milp import MilpBuilder, MilpModel
from feasnet.network import DnnParams, forward
from feasnet.problem import BoxBounds, CalibratedLimits, InputDomain, OplcProblem

BIG_M_CAP = 1e7


class EncodingError(RuntimeError):
    """A neuron bound exceeds the big-M sanity cap; the model needs rescaling."""


@dataclass
class NeuronBounds:
    """Certified pre-activation bounds for every stage, valid over all of D."""

    hmin: list[np.ndarray]        # hidden pre-activation lows, one array per layer
    hmax: list[np.ndarray]
    out_min: np.ndarray           # bounds of W_o h + b_o (before the clamps)
    out_max: np.ndarray
    box: BoxBounds
    u_min: np.ndarray = field(init=False)     # lower-clamp stage input
    u_max: np.ndarray = field(init=False)
    htilde_min: np.ndarray = field(init=False)
    htilde_max: np.ndarray = field(init=False)
    v_min: np.ndarray = field(init=False)     # upper-clamp stage input
    v_max: np.ndarray = field(init=False)
    xhat_min: np.ndarray = field(init=False)
    xhat_max: np.ndarray = field(init=False)

    def __post_init__(self):
        lo, hi = self.box.lower, self.box.upper
        self.u_min = self.out_min - lo
        self.u_max = self.out_max - lo
        self.htilde_min = lo + np.maximum(self.u_min, 0.0)
        self.htilde_max = lo + np.maximum(self.u_max, 0.0)
        self.v_min = hi - self.htilde_max
        self.v_max = hi - self.htilde_min
        self.xhat_min = hi - np.maximum(self.v_max, 0.0)
        self.xhat_max = hi - np.maximum(self.v_min, 0.0)

    def magnitude(self) -> float:
        vals = [np.max(np.abs(a)) for a in self.hmin + self.hmax] + [
            np.max(np.abs(self.out_min)),
            np.max(np.abs(self.out_max)),
        ]
        return float(max(vals))


def compute_neuron_bounds(
    params: DnnParams,
    domain: InputDomain,
    box: BoxBounds,
    config: NumericConfig = DEFAULT_CONFIG,
) -> NeuronBounds:
    """Min/max every neuron's pre-activation over the relaxed encoding.

    Layer by layer: each neuron is bounded by two LPs over the triangle
    relaxation of all earlier layers, so later bounds reuse (and benefit
    from) earlier ones.
    """
    if any(is_free(v) for v in np.concatenate([box.lower, box.upper])):
        raise EncodingError("encoding requires finite box bounds on every variable")
    m = domain.dim_m
    builder = MilpBuilder()
    theta = [builder.var(f"theta{k}", domain.bounding_lo[k], domain.bounding_hi[k]) for k in range(m)]
    for i in range(domain.a_theta.shape[0]):
        builder.row({theta[k]: domain.a_theta[i, k] for k in range(m)
                     if domain.a_theta[i, k] != 0.0}, LESS, domain.b_theta[i])

    hmins: list[np.ndarray] = []
    hmaxs: list[np.ndarray] = []
    prev_vars = theta
    for li, (w, b) in enumerate(zip(params.hidden_weights, params.hidden_biases)):
        lp = builder.build({}, minimize=True).base
        lo_l = np.empty(w.shape[0])
        hi_l = np.empty(w.shape[0])
        for k in range(w.shape[0]):
            c = np.zeros(builder.n_vars)
            c[prev_vars] = w[k]
            lo_r = solve_lp(lp, config, c_override=c, minimize_override=True)
            hi_r = solve_lp(lp, config, c_override=c, minimize_override=False)
            if not (lo_r.optimal and hi_r.optimal):
                raise EncodingError(f"bound LP failed at layer {li} neuron {k}")
            lo_l[k] = lo_r.objective + b[k]
            hi_l[k] = hi_r.objective + b[k]
        hmins.append(lo_l)
        hmaxs.append(hi_l)
        prev_vars, _ = _append_layer(builder, prev_vars, w, b, lo_l, hi_l, relaxed=True, tag=f"h{li}")

    lp = builder.build({}, minimize=True).base
    n_out = params.out_weight.shape[0]
    out_lo = np.empty(n_out)
    out_hi = np.empty(n_out)
    for k in range(n_out):
        c = np.zeros(builder.n_vars)
        c[prev_vars] = params.out_weight[k]
        lo_r = solve_lp(lp, config, c_override=c, minimize_override=True)
        hi_r = solve_lp(lp, config, c_override=c, minimize_override=False)
        if not (lo_r.optimal and hi_r.optimal):
            raise EncodingError(f"bound LP failed at output {k}")
        out_lo[k] = lo_r.objective + params.out_bias[k]
        out_hi[k] = hi_r.objective + params.out_bias[k]

    bounds = NeuronBounds(hmins, hmaxs, out_lo, out_hi, box)
    if bounds.magnitude() > BIG_M_CAP:
        raise EncodingError(
            f"neuron bounds reach {bounds.magnitude():.3g} > {BIG_M_CAP:.0e}; rescale the model"
        )
    return bounds


def _append_layer(builder, prev_vars, w, b, lo_l, hi_l, relaxed: bool, tag: str):
    """Add one hidden layer's (h, z) variables and big-M rows to the builder.

    With ``relaxed`` the binaries are continuous in [0, 1] (used while
    computing bounds); otherwise they are true binaries.  Stable neurons keep
    their binary with bounds pinned to the known activation state.
    """
    h_vars, z_vars = [], []
    for k in range(w.shape[0]):
        hmin_k, hmax_k = lo_l[k], hi_l[k]
        h = builder.var(f"{tag}_h{k}", 0.0, max(hmax_k, 0.0))
        z = builder.var(f"{tag}_z{k}", 0.0, 1.0, binary=not relaxed)
        if hmin_k >= 0.0:
            builder.fix(z, 1.0)
        elif hmax_k <= 0.0:
            builder.fix(z, 0.0)
        pre = {prev_vars[j]: w[k, j] for j in range(len(prev_vars)) if w[k, j] != 0.0}
        # h >= pre + b  <=>  pre - h <= -b
        builder.row({**pre, h: -1.0}, LESS, -b[k])
        # h <= pre + b - hmin (1 - z)
        builder.row({**{v: -c for v, c in pre.items()}, h: 1.0, z: -hmin_k}, LESS, b[k] - hmin_k)
        # h <= hmax z
        builder.row({h: 1.0, z: -max(hmax_k, 0.0)}, LESS, 0.0)
        h_vars.append(h)
        z_vars.append(z)
    return h_vars, z_vars


@dataclass
class DnnMilpEncoding:
    """Growing MILP fragment whose (theta, x_hat) solutions equal the network graph."""

    builder: MilpBuilder
    params: DnnParams
    bounds: NeuronBounds
    domain: InputDomain
    theta_vars: list[int]
    hidden_vars: list[list[int]]
    htilde_vars: list[int]
    xhat_vars: list[int]
    z_hidden: list[list[int]]
    z_lower: list[int]
    z_upper: list[int]
    violation_var: int | None = None
    selector_vars: list[int] | None = None
    big_m_registry: dict = field(default_factory=dict)
    n_problem_rows: int = 0

    def variable_census(self) -> dict:
        """Encoding variable counts (theta and the objective variable excluded)."""
        n_hidden = sum(len(v) for v in self.hidden_vars)
        n_out = len(self.xhat_vars)
        binaries = sum(len(z) for z in self.z_hidden) + len(self.z_lower) + len(self.z_upper)
        selectors = len(self.selector_vars or [])
        return {
            "continuous": n_hidden + 2 * n_out,
            "binaries": binaries + selectors,
            "selector_binaries": selectors,
            "total": n_hidden + 2 * n_out + binaries + selectors,
        }

    def fix_theta(self, theta: np.ndarray) -> None:
        for var, val in zip(self.theta_vars, np.asarray(theta, dtype=float)):
            self.builder.row({var: 1.0}, EQUAL, float(val))

    def to_model(self, objective: dict | None = None, minimize: bool = True) -> MilpModel:
        return self.builder.build(objective or {}, minimize, self.big_m_registry)

    def extract(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(theta, x_hat) from a full MILP solution vector."""
        return x[self.theta_vars], x[self.xhat_vars]

    def assignment_for(self, theta: np.ndarray) -> np.ndarray:
        """Full variable assignment consistent with forward(theta) (warm starts)."""
        vec = np.zeros(self.builder.n_vars)
        theta = np.asarray(theta, dtype=float)
        vec[self.theta_vars] = theta
        h = theta
        for li, (w, b) in enumerate(zip(self.params.hidden_weights, self.params.hidden_biases)):
            pre = w @ h + b
            h = np.maximum(pre, 0.0)
            vec[self.hidden_vars[li]] = h
            vec[self.z_hidden[li]] = (pre > 0.0).astype(float)
            # pinned binaries must keep their pinned value on degenerate ties
            for k, z in enumerate(self.z_hidden[li]):
                lo, hi = self.builder.lo[z], self.builder.hi[z]
                vec[z] = min(max(vec[z], lo), hi)
        box = self.bounds.box
        u = self.params.out_weight @ h + self.params.out_bias - box.lower
        ht = np.maximum(u, 0.0) + box.lower
        v = box.upper - ht
        x_hat = box.upper - np.maximum(v, 0.0)
        vec[self.htilde_vars] = ht
        vec[self.xhat_vars] = x_hat
        vec[self.z_lower] = (u > 0.0).astype(float)
        vec[self.z_upper] = (v > 0.0).astype(float)
        for z in self.z_lower + self.z_upper:
            vec[z] = min(max(vec[z], self.builder.lo[z]), self.builder.hi[z])
        return vec


def encode_dnn(
    params: DnnParams,
    bounds: NeuronBounds,
    domain: InputDomain,
) -> DnnMilpEncoding:
    """Build the exact MILP fragment of the network over ``domain``.

    Includes the domain rows, every hidden-neuron encoding, and the two clamp
    stages.  One binary exists per hidden neuron and per clamp stage output;
    stable stages keep theirs pinned by bounds.
    """
    if bounds.magnitude() > BIG_M_CAP:
        raise EncodingError("neuron bounds exceed the big-M sanity cap; rescale")
    builder = MilpBuilder()
    m = domain.dim_m
    theta = [builder.var(f"theta{k}", domain.bounding_lo[k], domain.bounding_hi[k]) for k in range(m)]
    for i in range(domain.a_theta.shape[0]):
        builder.row({theta[k]: domain.a_theta[i, k] for k in range(m)
                     if domain.a_theta[i, k] != 0.0}, LESS, domain.b_theta[i])

    registry: dict = {}
    hidden_vars, z_hidden = [], []
    prev = theta
    for li, (w, b) in enumerate(zip(params.hidden_weights, params.hidden_biases)):
        h_vars, z_vars = _append_layer(builder, prev, w, b, bounds.hmin[li], bounds.hmax[li],
                                       relaxed=False, tag=f"h{li}")
        for k, (lo_k, hi_k) in enumerate(zip(bounds.hmin[li], bounds.hmax[li])):
            registry[f"h{li}_{k}"] = max(abs(lo_k), abs(hi_k))
        hidden_vars.append(h_vars)
        z_hidden.append(z_vars)
        prev = h_vars

    box = bounds.box
    n_out = params.out_weight.shape[0]
    xhat_vars, z_lower, z_upper = [], [], []
    ht_vars = []
    for k in range(n_out):
        u_min, u_max = bounds.u_min[k], bounds.u_max[k]
        ht = builder.var(f"lo_h{k}", box.lower[k], bounds.htilde_max[k])
        zl = builder.var(f"lo_z{k}", 0.0, 1.0, binary=True)
        if u_min >= 0.0:
            builder.fix(zl, 1.0)
        elif u_max <= 0.0:
            builder.fix(zl, 0.0)
        wo = {prev[j]: params.out_weight[k, j] for j in range(len(prev))
              if params.out_weight[k, j] != 0.0}
        bo = params.out_bias[k]
        # h~ - lower >= u  <=>  W_o h - h~ <= -b_o
        builder.row({**wo, ht: -1.0}, LESS, -bo)
        # h~ - lower <= u - u_min (1 - z)
        builder.row({**{v: -c for v, c in wo.items()}, ht: 1.0, zl: -u_min}, LESS, bo - u_min)
        # h~ - lower <= u_max z
        builder.row({ht: 1.0, zl: -max(u_max, 0.0)}, LESS, box.lower[k])
        registry[f"clamp_lo_{k}"] = max(abs(u_min), abs(u_max))

        v_min, v_max = bounds.v_min[k], bounds.v_max[k]
        xh = builder.var(f"xhat{k}", bounds.xhat_min[k], min(box.upper[k], bounds.xhat_max[k]))
        zu = builder.var(f"up_z{k}", 0.0, 1.0, binary=True)
        if v_min >= 0.0:
            builder.fix(zu, 1.0)
        elif v_max <= 0.0:
            builder.fix(zu, 0.0)
        # x^ <= h~
        builder.row({xh: 1.0, ht: -1.0}, LESS, 0.0)
        # x^ >= h~ + v_min (1 - z)
        builder.row({xh: -1.0, ht: 1.0, zu: -v_min}, LESS, -v_min)
        # x^ >= upper - v_max z
        builder.row({xh: -1.0, zu: -max(v_max, 0.0)}, LESS, -box.upper[k])
        registry[f"clamp_up_{k}"] = max(abs(v_min), abs(v_max))
        ht_vars.append(ht)
        xhat_vars.append(xh)
        z_lower.append(zl)
        z_upper.append(zu)

    return DnnMilpEncoding(
        builder=builder,
        params=params,
        bounds=bounds,
        domain=domain,
        theta_vars=theta,
        hidden_vars=hidden_vars,
        htilde_vars=ht_vars,
        xhat_vars=xhat_vars,
        z_hidden=z_hidden,
        z_lower=z_lower,
        z_upper=z_upper,
        big_m_registry=registry,
    )


def encode_max_violation(
    encoding: DnnMilpEncoding,
    problem: OplcProblem,
    calibrated: CalibratedLimits,
) -> DnnMilpEncoding:
    """Add the worst-case relative violation objective over the problem rows.

    Creates ``nu >= row_j`` for every row, the selector rows
    ``nu <= row_j + C(1 - b_j)`` with ``sum b_j = 1``, and marks ``nu`` for
    maximization.  ``row_j = (a_j x^ + b_j theta - e_hat_j)/|e_j|``.  The
    selector constant comes from interval bounds of the rows, doubled.
    """
    builder = encoding.builder
    cons = problem.constraints
    abs_e = np.abs(cons.e)
    xhat = np.array(encoding.xhat_vars)
    theta = np.array(encoding.theta_vars)

    x_lo, x_hi = encoding.bounds.xhat_min, encoding.bounds.xhat_max
    t_lo, t_hi = encoding.domain.bounding_lo, encoding.domain.bounding_hi
    row_lo = np.empty(cons.n_rows)
    row_hi = np.empty(cons.n_rows)
    for j in range(cons.n_rows):
        ax = cons.a[j] / abs_e[j]
        bt = cons.b[j] / abs_e[j]
        base = -calibrated.e_hat[j] / abs_e[j]
        row_lo[j] = base + np.sum(np.minimum(ax * x_lo, ax * x_hi)) + np.sum(np.minimum(bt * t_lo, bt * t_hi))
        row_hi[j] = base + np.sum(np.maximum(ax * x_lo, ax * x_hi)) + np.sum(np.maximum(bt * t_lo, bt * t_hi))
    big_c = 2.0 * float(np.max(row_hi) - np.min(row_lo))

    nu = builder.var("nu", float(np.max(row_lo)) - 1.0, float(np.max(row_hi)) + 1.0)
    selectors = []
    for j in range(cons.n_rows):
        coeffs = {int(xhat[k]): cons.a[j, k] / abs_e[j] for k in range(xhat.size) if cons.a[j, k] != 0.0}
        for k in range(theta.size):
            if cons.b[j, k] != 0.0:
                coeffs[int(theta[k])] = coeffs.get(int(theta[k]), 0.0) + cons.b[j, k] / abs_e[j]
        rhs = calibrated.e_hat[j] / abs_e[j]
        # nu >= row_j
        builder.row({**{v: c for v, c in coeffs.items()}, nu: -1.0}, LESS, rhs)
        bj = builder.var(f"sel{j}", 0.0, 1.0, binary=True)
        # nu <= row_j + C (1 - b_j)
        builder.row({**{v: -c for v, c in coeffs.items()}, nu: 1.0, bj: big_c}, LESS, big_c - rhs)
        encoding.big_m_registry[f"selector_{j}"] = big_c
        selectors.append(bj)
    builder.row({b: 1.0 for b in selectors}, EQUAL, 1.0)

    encoding.violation_var = nu
    encoding.selector_vars = selectors
    encoding.n_problem_rows = cons.n_rows
    return encoding


def violation_model(encoding: DnnMilpEncoding) -> MilpModel:
    """MILP maximizing the encoded worst-case violation variable."""
    if encoding.violation_var is None:
        raise EncodingError("call encode_max_violation first")
    return encoding.to_model({encoding.violation_var: 1.0}, minimize=False)
