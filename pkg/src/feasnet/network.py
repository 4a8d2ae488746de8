"""Fixed-topology ReLU network with box-clamped outputs, loss, and training.

The output stage applies two ReLU "clamp" transforms so that every prediction
lands inside the decision-variable box by construction:

    h_0 = theta
    h_i = relu(W_i h_{i-1} + b_i)                     i = 1..depth
    h~  = relu(W_o h_depth + b_o - lower) + lower      (lower clamp)
    x^  = upper - relu(upper - h~)                     (upper clamp)

Training is seeded mini-batch SGD with momentum on the mean of
``w1/N * ||x^ - x*||^2 + w2/|E| * sum_j max(g_j(x^, theta) - e_hat_j, 0)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from feasnet.config import DEFAULT_CONFIG, NumericConfig
from feasnet.problem import BoxBounds, CalibratedLimits, OplcProblem


@dataclass
class DnnParams:
    hidden_weights: list[np.ndarray]
    hidden_biases: list[np.ndarray]
    out_weight: np.ndarray
    out_bias: np.ndarray

    def __post_init__(self):
        self.hidden_weights = [np.asarray(w, dtype=float) for w in self.hidden_weights]
        self.hidden_biases = [np.asarray(b, dtype=float) for b in self.hidden_biases]
        self.out_weight = np.asarray(self.out_weight, dtype=float)
        self.out_bias = np.asarray(self.out_bias, dtype=float)
        widths = {w.shape[0] for w in self.hidden_weights}
        if len(widths) > 1:
            raise ValueError("all hidden layers must share one width")
        for arr in self.flat():
            if not np.all(np.isfinite(arr)):
                raise ValueError("network parameters must be finite")

    @property
    def depth(self) -> int:
        return len(self.hidden_weights)

    @property
    def width(self) -> int:
        return self.hidden_weights[0].shape[0]

    @property
    def dim_in(self) -> int:
        return self.hidden_weights[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.out_weight.shape[0]

    def flat(self):
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            yield w
            yield b
        yield self.out_weight
        yield self.out_bias

    def copy(self) -> "DnnParams":
        return DnnParams(
            [w.copy() for w in self.hidden_weights],
            [b.copy() for b in self.hidden_biases],
            self.out_weight.copy(),
            self.out_bias.copy(),
        )

    @classmethod
    def init(cls, dim_in: int, width: int, depth: int, dim_out: int, seed: int) -> "DnnParams":
        """Uniform He-style init U(-sqrt(6/fan_in), +sqrt(6/fan_in))."""
        rng = np.random.default_rng(seed)

        def layer(n_out, n_in):
            s = np.sqrt(6.0 / n_in)
            return rng.uniform(-s, s, size=(n_out, n_in)), rng.uniform(-s, s, size=n_out)

        ws, bs = [], []
        fan = dim_in
        for _ in range(depth):
            w, b = layer(width, fan)
            ws.append(w)
            bs.append(b)
            fan = width
        wo, bo = layer(dim_out, fan)
        return cls(ws, bs, wo, bo)


def init_for_problem(problem: OplcProblem, width: int, depth: int, seed: int) -> "DnnParams":
    """Seeded init conditioned on the problem's scales.

    An affine input normalizer (domain bounding box -> [-1, 1]) is folded
    exactly into the first layer's weights, and the output layer is centered
    on the decision box with its weights rescaled so initial predictions land
    strictly inside it (the clamp stages otherwise start saturated with zero
    gradient).  Raw inputs can be fed directly and the big-M encoding still
    sees ordinary weights.  Infinite box sides fold as center 0 / unit span.
    """
    from feasnet.config import is_free

    params = DnnParams.init(problem.dim_m, width, depth, problem.dim_n, seed)
    t_lo, t_hi = problem.domain.bounding_lo, problem.domain.bounding_hi
    center = np.where(np.isfinite(t_lo + t_hi), (t_lo + t_hi) / 2.0, 0.0)
    half = np.where(np.isfinite(t_hi - t_lo) & (t_hi - t_lo > 1e-12), (t_hi - t_lo) / 2.0, 1.0)
    w1 = params.hidden_weights[0]
    params.hidden_biases[0] = params.hidden_biases[0] - w1 @ (center / half)
    params.hidden_weights[0] = w1 / half

    x_lo, x_hi = problem.box.lower, problem.box.upper
    finite = np.array([not (is_free(l) or is_free(h)) for l, h in zip(x_lo, x_hi)])
    span = np.where(finite, x_hi - x_lo, 4.0)
    # empirical pre-activation spread over the domain sets the output scale
    probe = problem.domain.sample(64, np.random.default_rng(seed + 1))
    h = probe
    for w, b in zip(params.hidden_weights, params.hidden_biases):
        h = _relu(h @ w.T + b)
    pre = h @ params.out_weight.T
    rms = np.sqrt(np.mean(pre**2, axis=0))
    # shrink (never amplify) so initial predictions cannot start saturated
    scale = np.minimum(1.0, (span / 8.0) / np.maximum(rms, 1e-12))
    params.out_weight = params.out_weight * scale[:, None]
    params.out_bias = np.where(finite, (x_lo + x_hi) / 2.0, 0.0)
    return params


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 64
    w1: float = 1.0
    w2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class Dataset:
    """Input/label pairs plus the calibration their labels were solved under."""

    inputs: np.ndarray    # (n, M)
    labels: np.ndarray    # (n, N)
    calibration: CalibratedLimits

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.labels = np.atleast_2d(np.asarray(self.labels, dtype=float))
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels must pair up")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def extend(self, inputs: np.ndarray, labels: np.ndarray) -> "Dataset":
        if len(inputs) == 0:
            return self
        return Dataset(
            np.vstack([self.inputs, np.atleast_2d(inputs)]),
            np.vstack([self.labels, np.atleast_2d(labels)]),
            self.calibration,
        )


def _relu(v):
    return np.maximum(v, 0.0)


def forward(params: DnnParams, theta: np.ndarray, box: BoxBounds) -> np.ndarray:
    """Network output for one input; always inside the box by construction."""
    h = np.asarray(theta, dtype=float)
    for w, b in zip(params.hidden_weights, params.hidden_biases):
        h = _relu(w @ h + b)
    ht = _relu(params.out_weight @ h + params.out_bias - box.lower) + box.lower
    return -_relu(box.upper - ht) + box.upper


def forward_batch(params: DnnParams, thetas: np.ndarray, box: BoxBounds) -> np.ndarray:
    """Vectorized forward pass over rows of ``thetas``; (n, N) output."""
    h = np.atleast_2d(np.asarray(thetas, dtype=float))
    for w, b in zip(params.hidden_weights, params.hidden_biases):
        h = _relu(h @ w.T + b)
    ht = _relu(h @ params.out_weight.T + params.out_bias - box.lower) + box.lower
    return -_relu(box.upper - ht) + box.upper


def loss(
    params: DnnParams,
    theta: np.ndarray,
    x_star: np.ndarray,
    problem: OplcProblem,
    calibrated: CalibratedLimits,
    w1: float,
    w2: float,
) -> float:
    x_hat = forward(params, theta, problem.box)
    return _loss_from_prediction(x_hat, theta, x_star, problem, calibrated, w1, w2)


def _loss_from_prediction(x_hat, theta, x_star, problem, calibrated, w1, w2) -> float:
    x_star = np.asarray(x_star, dtype=float)
    if x_star.size != problem.dim_n:
        raise ValueError("label dimension mismatch")
    n = problem.dim_n
    mse = w1 / n * float(np.sum((x_hat - x_star) ** 2))
    g = problem.constraints.values(x_hat, theta)
    pen = w2 / problem.n_constraints * float(np.sum(np.maximum(g - calibrated.e_hat, 0.0)))
    return mse + pen


@dataclass
class Gradient:
    hidden_weights: list[np.ndarray]
    hidden_biases: list[np.ndarray]
    out_weight: np.ndarray
    out_bias: np.ndarray

    def flat(self):
        for w, b in zip(self.hidden_weights, self.hidden_biases):
            yield w
            yield b
        yield self.out_weight
        yield self.out_bias


def _forward_trace(params: DnnParams, theta: np.ndarray, box: BoxBounds):
    """Forward pass retaining activations and the clamp-stage gates."""
    hs = [np.asarray(theta, dtype=float)]
    gates = []
    h = hs[0]
    for w, b in zip(params.hidden_weights, params.hidden_biases):
        pre = w @ h + b
        gates.append(pre > 0.0)
        h = _relu(pre)
        hs.append(h)
    u = params.out_weight @ h + params.out_bias - box.lower
    gate_lo = u > 0.0
    ht = _relu(u) + box.lower
    v = box.upper - ht
    gate_hi = v > 0.0
    x_hat = -_relu(v) + box.upper
    return hs, gates, gate_lo, gate_hi, x_hat


def backprop_from_output(
    params: DnnParams,
    theta: np.ndarray,
    box: BoxBounds,
    d_xhat: np.ndarray,
) -> Gradient:
    """Exact reverse-mode gradient of ``d_xhat @ x_hat`` w.r.t. all parameters.

    ReLU subgradient at 0 is taken as 0 (gates are strict); the clamp stages
    pass gradient only where they are in their linear region.
    """
    hs, gates, gate_lo, gate_hi, _ = _forward_trace(params, theta, box)
    # x_hat = upper - relu(upper - h~): d x_hat / d h~ = gate_hi
    d_ht = np.asarray(d_xhat, dtype=float) * gate_hi
    # h~ = relu(u) + lower with u = W_o h + b_o - lower
    d_u = d_ht * gate_lo
    g_wo = np.outer(d_u, hs[-1])
    g_bo = d_u.copy()
    d_h = params.out_weight.T @ d_u
    g_ws = [None] * params.depth
    g_bs = [None] * params.depth
    for i in range(params.depth - 1, -1, -1):
        d_pre = d_h * gates[i]
        g_ws[i] = np.outer(d_pre, hs[i])
        g_bs[i] = d_pre.copy()
        d_h = params.hidden_weights[i].T @ d_pre
    return Gradient(g_ws, g_bs, g_wo, g_bo)


def grad(
    params: DnnParams,
    batch_inputs: np.ndarray,
    batch_labels: np.ndarray,
    problem: OplcProblem,
    calibrated: CalibratedLimits,
    config: TrainConfig,
) -> tuple[Gradient, float]:
    """Gradient of the batch-mean loss; returns (gradient, mean loss)."""
    batch_inputs = np.atleast_2d(batch_inputs)
    batch_labels = np.atleast_2d(batch_labels)
    if batch_inputs.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    n = problem.dim_n
    n_rows = problem.n_constraints
    total = None
    total_loss = 0.0
    for theta, x_star in zip(batch_inputs, batch_labels):
        hs, gates, gate_lo, gate_hi, x_hat = _forward_trace(params, theta, problem.box)
        g_vals = problem.constraints.values(x_hat, theta)
        viol = g_vals - calibrated.e_hat
        total_loss += (
            config.w1 / n * float(np.sum((x_hat - x_star) ** 2))
            + config.w2 / n_rows * float(np.sum(np.maximum(viol, 0.0)))
        )
        d_xhat = 2.0 * config.w1 / n * (x_hat - x_star)
        active = viol > 0.0
        if np.any(active):
            d_xhat = d_xhat + config.w2 / n_rows * problem.constraints.a[active].sum(axis=0)
        g = backprop_from_output(params, theta, problem.box, d_xhat)
        if total is None:
            total = g
        else:
            for acc, new in zip(total.flat(), g.flat()):
                acc += new
    scale = 1.0 / batch_inputs.shape[0]
    for acc in total.flat():
        acc *= scale
    return total, total_loss * scale


class DivergenceError(RuntimeError):
    pass


def train(
    params: DnnParams,
    dataset: Dataset,
    problem: OplcProblem,
    config: TrainConfig,
    epochs: int | None = None,
) -> tuple[DnnParams, list[float]]:
    """Seeded shuffled mini-batch SGD with momentum; returns (params, loss history).

    The update is v <- momentum*v - lr*g, p <- p + v.  The input params are
    not mutated.  ``epochs`` overrides config.epochs when given.
    """
    params = params.copy()
    n_epochs = config.epochs if epochs is None else epochs
    rng = np.random.default_rng(config.seed)
    velocity = [np.zeros_like(arr) for arr in params.flat()]
    history: list[float] = []
    n = len(dataset)
    for _ in range(n_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            g, batch_loss = grad(
                params, dataset.inputs[idx], dataset.labels[idx], problem,
                dataset.calibration, config,
            )
            if not np.isfinite(batch_loss):
                raise DivergenceError("training loss became non-finite")
            epoch_loss += batch_loss * idx.size
            ok = True
            for p_arr, v_arr, g_arr in zip(params.flat(), velocity, g.flat()):
                v_arr *= config.momentum
                v_arr -= config.lr * g_arr
                p_arr += v_arr
                ok = ok and bool(np.all(np.isfinite(p_arr)))
            if not ok:
                raise DivergenceError("network parameters became non-finite")
        history.append(epoch_loss / n)
    return params, history


# -- persistence --------------------------------------------------------------

def params_to_dict(params: DnnParams) -> dict:
    return {
        "hidden_weights": [w.tolist() for w in params.hidden_weights],
        "hidden_biases": [b.tolist() for b in params.hidden_biases],
        "out_weight": params.out_weight.tolist(),
        "out_bias": params.out_bias.tolist(),
        "shapes": {
            "depth": params.depth,
            "width": params.width,
            "dim_in": params.dim_in,
            "dim_out": params.dim_out,
        },
    }


def params_from_dict(data: dict) -> DnnParams:
    return DnnParams(
        [np.array(w) for w in data["hidden_weights"]],
        [np.array(b) for b in data["hidden_biases"]],
        np.array(data["out_weight"]),
        np.array(data["out_bias"]),
    )


def params_to_json(params: DnnParams) -> str:
    return json.dumps(params_to_dict(params))


def params_from_json(text: str) -> DnnParams:
    return params_from_dict(json.loads(text))


def params_digest(params: DnnParams) -> str:
    import hashlib

    return hashlib.sha256(params_to_json(params).encode()).hexdigest()[:16]
