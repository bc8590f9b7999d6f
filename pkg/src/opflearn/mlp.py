"""Feed-forward network mapping loads to generator scaling factors.

Architecture: ReLU hidden layers and a sigmoid output layer, so predictions
land in (0, 1) and de-scale directly into each generator's operating range.
The slack generator is excluded from the output (it is recovered by power
balance), so the output width is one less than the generator count.

The training loss is a weighted sum of the scaling-factor mean-square error
and a line-overload penalty. The penalty reconstructs limit-normalized flows
from the predicted dispatch through a per-contingency linear map that is
pre-factored once (PenaltyContext), never by per-batch linear solves, and all
gradients — including the path through de-scaling, the balance substitution,
and the flow maps — are analytic. Optimization is plain minibatch SGD with
momentum; given a seed, initialization, shuffling, and therefore the final
weights are deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .cases import GridCase, case_hash
from .dataset import Dataset, LoadNormalizer
from .network import ContingencyMatrices, ContingencySet, build_all_matrices, nonslack_indices
from .validation import as_load_matrix, as_target_matrix

logger = logging.getLogger(__name__)

MODEL_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class MlpParameters:
    """Dense layer weights (fan_out x fan_in) and biases, one pair per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "MlpParameters":
        return MlpParameters(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_parameters(layer_sizes: list[int], rng: np.random.Generator) -> MlpParameters:
    """Symmetric uniform init in +/- sqrt(6 / (fan_in + fan_out)); zero biases."""
    if len(layer_sizes) < 2 or any(k < 1 for k in layer_sizes):
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParameters(weights=weights, biases=biases)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(params: MlpParameters, x: np.ndarray) -> np.ndarray:
    """Network output for a single input vector or a batch of rows."""
    h = np.atleast_2d(np.asarray(x, dtype=float))
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
    out = _sigmoid(h @ params.weights[-1].T + params.biases[-1])
    return out[0] if np.ndim(x) == 1 else out


def _forward_trace(params: MlpParameters, x: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    activations = [x]
    pre = []
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ w.T + b
        h = np.maximum(z, 0.0)
        pre.append(z)
        activations.append(h)
    z_out = h @ params.weights[-1].T + params.biases[-1]
    y = _sigmoid(z_out)
    return activations, pre, y


@dataclass(frozen=True)
class TrainingConfig:
    w1: float = 1.0
    w2: float = 1.0
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class PenaltyContext:
    """Pre-factored flow evaluation for the feasibility penalty.

    ``flow_maps[c]`` maps the reduced (slack-bus-dropped, per-unit) injection
    vector to limit-normalized line flows of contingency case c, folding the
    monitor matrix through the reduced susceptance inverse. ``gen_rows`` gives
    each predicted generator's position in the reduced vector; the slack
    generator never appears (its bus row is the dropped one).
    """

    base_mva: float
    nonslack: np.ndarray  # reduced position -> bus index
    gen_rows: np.ndarray  # predicted generator -> reduced position
    p_min_pu: np.ndarray  # predicted generators
    p_max_pu: np.ndarray
    flow_maps: tuple[np.ndarray, ...] = field(repr=False)
    n_rows: int

    @staticmethod
    def build(
        case: GridCase,
        cont: ContingencySet,
        matrices: list[ContingencyMatrices] | None = None,
    ) -> "PenaltyContext":
        if matrices is None:
            matrices = build_all_matrices(case, cont)
        nonslack = nonslack_indices(case)
        position = {int(bus): r for r, bus in enumerate(nonslack)}
        slack_gen = case.slack_gen_index
        predicted = [g for g in case.generators if g.index != slack_gen]
        base = case.base_mva
        maps = tuple(
            m.solve_reduced(m.monitor[:, nonslack].T).T for m in matrices
        )
        return PenaltyContext(
            base_mva=base,
            nonslack=nonslack,
            gen_rows=np.array([position[g.bus] for g in predicted], dtype=int),
            p_min_pu=np.array([g.p_min_mw for g in predicted]) / base,
            p_max_pu=np.array([g.p_max_mw for g in predicted]) / base,
            flow_maps=maps,
            n_rows=sum(m.monitor.shape[0] for m in matrices),
        )

    def reduced_injections(self, alpha: np.ndarray, p_d_mw: np.ndarray) -> np.ndarray:
        """Per-unit non-slack injections for predicted factors and raw loads (batch rows)."""
        p_g = self.p_min_pu + (self.p_max_pu - self.p_min_pu) * alpha
        u = np.zeros((alpha.shape[0], self.nonslack.size))
        u[:, self.gen_rows] = p_g
        u -= np.asarray(p_d_mw, dtype=float)[:, self.nonslack] / self.base_mva
        return u

    def flows(self, u_reduced: np.ndarray) -> list[np.ndarray]:
        """Limit-normalized flows per contingency, one (batch, rows) array each."""
        return [u_reduced @ m.T for m in self.flow_maps]


def _penalty_value_and_grad(
    ctx: PenaltyContext, alpha: np.ndarray, p_d_mw: np.ndarray, want_grad: bool
) -> tuple[float, np.ndarray | None]:
    """Mean over batch, contingencies, and monitored rows of max(flow^2 - 1, 0).

    Returns the penalty and, when requested, its gradient w.r.t. alpha.
    """
    batch = alpha.shape[0]
    u = ctx.reduced_injections(alpha, p_d_mw)
    scale = 1.0 / (batch * ctx.n_rows)
    total = 0.0
    du = np.zeros_like(u) if want_grad else None
    for m in ctx.flow_maps:
        f = u @ m.T
        excess = f * f - 1.0
        active = excess > 0.0
        if np.any(active):
            total += float(np.sum(excess[active])) * scale
            if want_grad:
                df = np.where(active, 2.0 * f, 0.0) * scale
                du += df @ m
    if not want_grad:
        return total, None
    grad_alpha = du[:, ctx.gen_rows] * (ctx.p_max_pu - ctx.p_min_pu)
    return total, grad_alpha


def loss(
    params: MlpParameters,
    x_norm: np.ndarray,
    y_true: np.ndarray,
    cfg: TrainingConfig,
    penalty: PenaltyContext | None = None,
    p_d_mw: np.ndarray | None = None,
) -> tuple[float, float, float]:
    """(total, prediction, penalty) losses on a batch of normalized inputs."""
    y_hat = forward(params, x_norm)
    y_hat = np.atleast_2d(y_hat)
    l_pg = float(np.mean((y_hat - y_true) ** 2))
    l_pen = 0.0
    if penalty is not None and cfg.w2 != 0.0:
        if p_d_mw is None:
            raise ValueError("penalty evaluation needs the raw loads of the batch")
        l_pen, _ = _penalty_value_and_grad(penalty, y_hat, np.atleast_2d(p_d_mw), False)
    return cfg.w1 * l_pg + cfg.w2 * l_pen, l_pg, l_pen


def loss_and_gradients(
    params: MlpParameters,
    x_norm: np.ndarray,
    y_true: np.ndarray,
    cfg: TrainingConfig,
    penalty: PenaltyContext | None = None,
    p_d_mw: np.ndarray | None = None,
) -> tuple[float, float, float, list[np.ndarray], list[np.ndarray]]:
    """Losses plus exact analytic gradients of the total loss w.r.t. all layers."""
    x_norm = np.atleast_2d(x_norm)
    y_true = np.atleast_2d(y_true)
    batch, k_out = y_true.shape
    activations, pre, y_hat = _forward_trace(params, x_norm)

    l_pg = float(np.mean((y_hat - y_true) ** 2))
    d_out = cfg.w1 * 2.0 * (y_hat - y_true) / (batch * k_out)

    l_pen = 0.0
    if penalty is not None and cfg.w2 != 0.0:
        if p_d_mw is None:
            raise ValueError("penalty evaluation needs the raw loads of the batch")
        l_pen, d_alpha = _penalty_value_and_grad(penalty, y_hat, np.atleast_2d(p_d_mw), True)
        d_out = d_out + cfg.w2 * d_alpha

    delta = d_out * y_hat * (1.0 - y_hat)  # through the sigmoid
    grads_w = [np.empty(0)] * len(params.weights)
    grads_b = [np.empty(0)] * len(params.biases)
    for layer in range(len(params.weights) - 1, -1, -1):
        grads_w[layer] = delta.T @ activations[layer]
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer]) * (pre[layer - 1] > 0.0)

    total = cfg.w1 * l_pg + cfg.w2 * l_pen
    return total, l_pg, l_pen, grads_w, grads_b


def sgd_train(
    params: MlpParameters,
    x_norm: np.ndarray,
    y_true: np.ndarray,
    cfg: TrainingConfig,
    penalty: PenaltyContext | None = None,
    p_d_mw: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> list[tuple[float, float, float]]:
    """Minibatch SGD with momentum, in place on ``params``.

    Returns the per-epoch trace of batch-averaged (total, prediction, penalty)
    losses. Shuffle order is drawn from ``rng``, so the result is a pure
    function of the inputs and the generator state. A non-finite loss aborts
    with TrainingDivergedError.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    n = x_norm.shape[0]
    vel_w = [np.zeros_like(w) for w in params.weights]
    vel_b = [np.zeros_like(b) for b in params.biases]
    history: list[tuple[float, float, float]] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            total, l_pg, l_pen, gw, gb = loss_and_gradients(
                params, x_norm[idx], y_true[idx], cfg, penalty,
                None if p_d_mw is None else p_d_mw[idx],
            )
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batches}: "
                    f"total={total}, prediction={l_pg}, penalty={l_pen}"
                )
            for i in range(len(params.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.learning_rate * gw[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.learning_rate * gb[i]
                params.weights[i] += vel_w[i]
                params.biases[i] += vel_b[i]
            sums += (total, l_pg, l_pen)
            batches += 1
        mean = sums / max(batches, 1)
        history.append((float(mean[0]), float(mean[1]), float(mean[2])))
    return history


class MlpDispatchRegressor(BaseEstimator, RegressorMixin):
    """Scikit-learn style regressor from raw loads (MW) to scaling factors.

    Input standardization is fitted on the training data and applied inside
    ``predict``. When a ``penalty`` context is given and ``w2`` is nonzero,
    training adds the line-overload penalty evaluated from each batch's raw
    loads.
    """

    def __init__(
        self,
        hidden_layers: tuple[int, ...] = (32, 16, 8),
        w1: float = 1.0,
        w2: float = 1.0,
        epochs: int = 300,
        batch_size: int = 64,
        learning_rate: float = 1e-3,
        momentum: float = 0.9,
        random_state: int = 0,
        penalty: PenaltyContext | None = None,
    ):
        self.hidden_layers = hidden_layers
        self.w1 = w1
        self.w2 = w2
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.random_state = random_state
        self.penalty = penalty

    def fit(self, X, y):
        X = as_load_matrix(X)
        y = as_target_matrix(y, X.shape[0])
        cfg = TrainingConfig(
            w1=self.w1, w2=self.w2, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, momentum=self.momentum,
            seed=self.random_state,
        )
        self.normalizer_ = LoadNormalizer().fit(X)
        sizes = [X.shape[1], *self.hidden_layers, y.shape[1]]
        rng = np.random.default_rng(cfg.seed)
        self.parameters_ = init_parameters(sizes, rng)
        self.history_ = sgd_train(
            self.parameters_, self.normalizer_.transform(X), y, cfg,
            penalty=self.penalty if cfg.w2 != 0.0 else None,
            p_d_mw=X if (self.penalty is not None and cfg.w2 != 0.0) else None,
            rng=rng,
        )
        return self

    def predict(self, X):
        X = as_load_matrix(X, self.parameters_.layer_sizes[0])
        return forward(self.parameters_, self.normalizer_.transform(X))


@dataclass
class DispatchModel:
    """Everything inference needs: weights, input statistics, generator data."""

    case_hash: str
    parameters: MlpParameters
    input_mean: np.ndarray
    input_std: np.ndarray
    p_min_mw: np.ndarray  # full generator vector, file order
    p_max_mw: np.ndarray
    gen_buses: list[int]  # internal bus index per generator
    slack_gen: int
    slack_angle: float = 0.0
    version: int = MODEL_VERSION

    @property
    def layer_sizes(self) -> list[int]:
        return self.parameters.layer_sizes

    @property
    def n_gen(self) -> int:
        return len(self.gen_buses)

    @property
    def _predicted(self) -> np.ndarray:
        """Generator indices carried by the network output (everything but slack)."""
        cached = getattr(self, "_predicted_cache", None)
        if cached is None:
            cached = np.array([g for g in range(self.n_gen) if g != self.slack_gen])
            object.__setattr__(self, "_predicted_cache", cached)
        return cached

    def predict_alpha(self, p_d_mw: np.ndarray) -> np.ndarray:
        x = (np.asarray(p_d_mw, dtype=float) - self.input_mean) / self.input_std
        return forward(self.parameters, x)

    def predict_generation(self, p_d_mw: np.ndarray) -> np.ndarray:
        """Full generation vector (MW): de-scaled factors plus slack by balance."""
        alpha = self.predict_alpha(p_d_mw)
        idx = self._predicted
        p_g = np.empty(self.n_gen)
        p_g[idx] = self.p_min_mw[idx] + (self.p_max_mw[idx] - self.p_min_mw[idx]) * alpha
        p_g[self.slack_gen] = float(np.sum(p_d_mw)) - float(np.sum(p_g[idx]))
        return p_g

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "case_hash": self.case_hash,
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.parameters.weights],
            "biases": [b.tolist() for b in self.parameters.biases],
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "p_min_mw": self.p_min_mw.tolist(),
            "p_max_mw": self.p_max_mw.tolist(),
            "gen_buses": list(self.gen_buses),
            "slack_gen": self.slack_gen,
            "slack_angle": self.slack_angle,
        }

    @staticmethod
    def from_dict(doc: dict) -> "DispatchModel":
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        params = MlpParameters(
            weights=[np.array(w, dtype=float) for w in doc["weights"]],
            biases=[np.array(b, dtype=float) for b in doc["biases"]],
        )
        return DispatchModel(
            case_hash=doc["case_hash"],
            parameters=params,
            input_mean=np.array(doc["input_mean"], dtype=float),
            input_std=np.array(doc["input_std"], dtype=float),
            p_min_mw=np.array(doc["p_min_mw"], dtype=float),
            p_max_mw=np.array(doc["p_max_mw"], dtype=float),
            gen_buses=[int(b) for b in doc["gen_buses"]],
            slack_gen=int(doc["slack_gen"]),
            slack_angle=float(doc["slack_angle"]),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "DispatchModel":
        with open(path, "r", encoding="utf-8") as fh:
            return DispatchModel.from_dict(json.load(fh))


def train_model(
    case: GridCase,
    cont: ContingencySet,
    data: Dataset,
    hidden_layers: tuple[int, ...] = (32, 16, 8),
    cfg: TrainingConfig | None = None,
    matrices: list[ContingencyMatrices] | None = None,
) -> tuple[DispatchModel, list[tuple[float, float, float]]]:
    """Fit a dispatch model on a labeled dataset's training split.

    The dataset must have been generated for the same case (hash-checked).
    Returns the inference bundle and the per-epoch loss trace.
    """
    if data.case_hash != case_hash(case):
        raise ValueError("dataset was generated for a different case (hash mismatch)")
    if case.n_gen < 2:
        raise ValueError("training needs at least two generators (slack is not predicted)")
    if not data.train_samples:
        raise ValueError("dataset has an empty training split")
    cfg = cfg or TrainingConfig()
    penalty = PenaltyContext.build(case, cont, matrices) if cfg.w2 != 0.0 else None
    est = MlpDispatchRegressor(
        hidden_layers=tuple(hidden_layers), w1=cfg.w1, w2=cfg.w2, epochs=cfg.epochs,
        batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
        momentum=cfg.momentum, random_state=cfg.seed, penalty=penalty,
    )
    est.fit(data.loads("train"), data.alphas("train"))
    model = DispatchModel(
        case_hash=data.case_hash,
        parameters=est.parameters_,
        input_mean=est.normalizer_.mean_,
        input_std=est.normalizer_.std_,
        p_min_mw=np.array([g.p_min_mw for g in case.generators]),
        p_max_mw=np.array([g.p_max_mw for g in case.generators]),
        gen_buses=[g.bus for g in case.generators],
        slack_gen=case.slack_gen_index,
    )
    return model, est.history_
