"""Dense feed-forward autoencoder trained with hand-derived backpropagation.

The reconstruction network is a plain stack of affine layers with ELU,
identity, or sigmoid activations. Gradients are exact analytic derivatives
of the mean-squared reconstruction error; optimization is bias-corrected
Adam with early stopping and a reduce-on-plateau learning-rate schedule.
Training is single-threaded and bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError, InsufficientDataError, ShapeError
from .numerics import Rng

MODEL_FORMAT_VERSION = 1

# Validation loss must drop by more than this to count as an improvement
# for both early stopping and the plateau scheduler.
IMPROVEMENT_TOL = 1e-7

ACTIVATIONS = ("elu", "identity", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise DomainError("layer dimensions must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation '{self.activation}'")


def default_autoencoder_specs() -> list[LayerSpec]:
    """7-5-3-5-7 topology: ELU on the 5-unit layers, identity elsewhere.

    The bottleneck and output stay linear so reconstructions of min-max
    scaled inputs are unbounded and slightly out-of-range readings remain
    representable.
    """
    return [
        LayerSpec(7, 5, "elu"),
        LayerSpec(5, 3, "identity"),
        LayerSpec(3, 5, "elu"),
        LayerSpec(5, 7, "identity"),
    ]


def _elu(z):
    return np.where(z > 0.0, z, np.expm1(z))


def _elu_prime(z):
    return np.where(z > 0.0, 1.0, np.exp(z))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(name, z):
    if name == "elu":
        return _elu(z)
    if name == "sigmoid":
        return _sigmoid(z)
    return z


def _activate_prime(name, z, a):
    if name == "elu":
        return _elu_prime(z)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


class Network:
    """Ordered affine layers; weights are (out_dim, in_dim), row-major."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray], specs: list[LayerSpec]):
        if not (len(weights) == len(biases) == len(specs)):
            raise ShapeError("layer lists must have equal length")
        for w, b, spec in zip(weights, biases, specs):
            if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ShapeError(f"layer arrays do not match spec {spec}")
        for prev, nxt in zip(specs, specs[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer chain breaks: {prev.out_dim} -> {nxt.in_dim}")
        self.weights = weights
        self.biases = biases
        self.specs = specs

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def clone(self) -> "Network":
        return Network([w.copy() for w in self.weights], [b.copy() for b in self.biases], list(self.specs))

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def init_network(specs: list[LayerSpec], seed: int) -> Network:
    """Glorot-uniform weights with limit sqrt(6/(in+out)); zero biases."""
    rng = Rng(seed)
    weights, biases = [], []
    for spec in specs:
        limit = math.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        w = np.array(
            [[rng.uniform(-limit, limit) for _ in range(spec.in_dim)] for _ in range(spec.out_dim)]
        )
        weights.append(w)
        biases.append(np.zeros(spec.out_dim))
    return Network(weights, biases, specs)


def forward(net: Network, x) -> tuple[np.ndarray, list]:
    """Run the network; cache holds (input, [(z, a) per layer]).

    Accepts a single vector (d,) or a batch (n, d); the output matches.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise ShapeError(f"input dim {x.shape[-1]} != network in_dim {net.in_dim}")
    a = x
    layer_cache = []
    for w, b, spec in zip(net.weights, net.biases, net.specs):
        z = a @ w.T + b
        a = _activate(spec.activation, z)
        layer_cache.append((z, a))
    return a, [x, layer_cache]


def mse_loss(x, x_hat) -> float:
    """(1/d) * sum of squared coordinate errors."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    diff = x_hat - x
    return float(np.mean(diff * diff))


def _backprop_from_output_delta(net: Network, cache, delta: np.ndarray) -> list[np.ndarray]:
    """Gradients for every weight and bias given dL/dz at the output layer.

    Returns [dW0, db0, dW1, db1, ...] in layer order.
    """
    x, layer_cache = cache
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    batched = delta.ndim == 2
    for i in range(len(net.weights) - 1, -1, -1):
        a_prev = x if i == 0 else layer_cache[i - 1][1]
        if batched:
            grads_w[i] = delta.T @ a_prev
            grads_b[i] = delta.sum(axis=0)
        else:
            grads_w[i] = np.outer(delta, a_prev)
            grads_b[i] = delta.copy()
        if i > 0:
            z_prev, a_prev_act = layer_cache[i - 1]
            da = delta @ net.weights[i]
            delta = da * _activate_prime(net.specs[i - 1].activation, z_prev, a_prev_act)
    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.append(gw)
        grads.append(gb)
    return grads


def backward(net: Network, cache, x) -> list[np.ndarray]:
    """Exact gradient of mse_loss(x, forward(net, x)) for every parameter.

    For a batch, gradients are averaged over rows (the mean-loss gradient).
    Returned list interleaves weight and bias gradients in layer order,
    matching net.parameters().
    """
    x = np.asarray(x, dtype=np.float64)
    x_in, layer_cache = cache
    if x.shape != x_in.shape:
        raise ShapeError("cache does not match this input")
    z_last, a_last = layer_cache[-1]
    d = x.shape[-1]
    dloss_da = (2.0 / d) * (a_last - x)
    if x.ndim == 2:
        dloss_da = dloss_da / x.shape[0]
    delta = dloss_da * _activate_prime(net.specs[-1].activation, z_last, a_last)
    return _backprop_from_output_delta(net, cache, delta)


@dataclass
class AdamState:
    """First/second-moment accumulators mirroring every parameter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float) -> "AdamState":
        if lr <= 0:
            raise DomainError("learning rate must be positive")
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
            lr=lr,
        )


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """Standard bias-corrected Adam update, applied in place.

    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("params/grads do not match optimizer state")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeError("gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    batch_size: int = 1024
    learning_rate: float = 1e-3
    early_stop_patience: int = 25
    plateau_patience: int = 20
    plateau_factor: float = 0.2
    min_lr: float = 1e-6
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise DomainError("patience values must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise DomainError("plateau_factor must lie in (0, 1)")
        if self.min_lr <= 0 or self.learning_rate <= 0:
            raise DomainError("learning rates must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise DomainError("batch_size and max_epochs must be >= 1")


@dataclass(frozen=True)
class TrainReport:
    epochs_run: int
    best_val_loss: float
    stopped_early: bool
    history: list[tuple[float, float, float]] = field(repr=False)  # (train_mse, val_mse, lr)

    def __post_init__(self):
        if self.history and min(v for _, v, _ in self.history) != self.best_val_loss:
            raise DomainError("best_val_loss must equal the minimum of the val history")


def _dataset_mse(net: Network, feats: np.ndarray) -> float:
    out, _ = forward(net, feats)
    return mse_loss(feats, out)


def train(net: Network, ae_train, ae_val, cfg: TrainConfig) -> tuple[Network, TrainReport]:
    """Mini-batch training with early stopping and best-weight restoration.

    Per epoch: seeded shuffle, Adam step per batch (last short batch kept,
    gradient averaged over its actual size), then a full-precision pass over
    the validation set. Validation loss must improve by more than 1e-7 to
    reset the patience counters. The plateau scheduler multiplies the
    learning rate by plateau_factor, skipping any reduction that would land
    below min_lr. Weights from the best validation epoch are returned.
    """
    train_feats = ae_train.features
    val_feats = ae_val.features
    if train_feats.shape[0] == 0 or val_feats.shape[0] == 0:
        raise InsufficientDataError("training and validation sets must be non-empty")
    if ae_train.is_labeled and int(ae_train.labels.max(initial=0)) != 0:
        raise DataError("reconstruction training data must contain only normal samples")

    work = net.clone()
    params = work.parameters()
    state = AdamState.for_params(params, cfg.learning_rate)
    rng = Rng(cfg.seed)

    n = train_feats.shape[0]
    order = np.arange(n)
    # strict minimum drives weight restoration; the tolerance-gated tracker
    # drives patience, so sub-tolerance dips never postpone stopping
    best_val = math.inf
    best_weights = None
    patience_best = math.inf
    early_counter = 0
    plateau_counter = 0
    history: list[tuple[float, float, float]] = []
    stopped_early = False
    epochs_run = 0

    for _epoch in range(cfg.max_epochs):
        epoch_lr = state.lr
        if cfg.shuffle_each_epoch:
            rng.shuffle(order)
        sq_err_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = train_feats[order[start : start + cfg.batch_size]]
            out, cache = forward(work, batch)
            diff = out - batch
            sq_err_sum += float((diff * diff).sum())
            grads = backward(work, cache, batch)
            adam_step(state, params, grads)
        train_mse = sq_err_sum / (n * work.in_dim)
        val_mse = _dataset_mse(work, val_feats)
        history.append((train_mse, val_mse, epoch_lr))
        epochs_run += 1

        if val_mse < best_val:
            best_val = val_mse
            best_weights = ([w.copy() for w in work.weights], [b.copy() for b in work.biases])
        if val_mse < patience_best - IMPROVEMENT_TOL:
            patience_best = val_mse
            early_counter = 0
            plateau_counter = 0
        else:
            early_counter += 1
            plateau_counter += 1
            if plateau_counter >= cfg.plateau_patience:
                reduced = state.lr * cfg.plateau_factor
                if reduced >= cfg.min_lr:
                    state.lr = reduced
                plateau_counter = 0
            if early_counter >= cfg.early_stop_patience:
                stopped_early = True
                break

    if best_weights is None:  # no epoch improved on +inf: cannot happen, but stay safe
        best_weights = (work.weights, work.biases)
        best_val = history[-1][1]
    best_net = Network(
        [w.copy() for w in best_weights[0]],
        [b.copy() for b in best_weights[1]],
        list(work.specs),
    )
    report = TrainReport(
        epochs_run=epochs_run,
        best_val_loss=best_val,
        stopped_early=stopped_early,
        history=history,
    )
    return best_net, report


def network_to_dict(net: Network) -> dict:
    topology = [net.specs[0].in_dim] + [s.out_dim for s in net.specs]
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "topology": topology,
        "activations": [s.activation for s in net.specs],
        "layers": [
            {
                "weights": [float(v) for v in w.ravel(order="C")],
                "biases": [float(v) for v in b],
            }
            for w, b in zip(net.weights, net.biases)
        ],
    }


def network_from_dict(d: dict) -> Network:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {d.get('format_version')!r}")
    topology = d["topology"]
    specs = [
        LayerSpec(topology[i], topology[i + 1], act) for i, act in enumerate(d["activations"])
    ]
    weights, biases = [], []
    for spec, layer in zip(specs, d["layers"]):
        weights.append(np.array(layer["weights"], dtype=np.float64).reshape(spec.out_dim, spec.in_dim))
        biases.append(np.array(layer["biases"], dtype=np.float64))
    return Network(weights, biases, specs)


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), sort_keys=True), encoding="utf-8")


def load_network(path) -> Network:
    return network_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_epoch_log(report: TrainReport, path) -> None:
    lines = ["epoch,train_mse,val_mse,lr"]
    for i, (train_mse, val_mse, lr) in enumerate(report.history, start=1):
        lines.append(f"{i},{train_mse!r},{val_mse!r},{lr!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
