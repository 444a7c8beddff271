"""Small ReLU MLPs trained with Adam, written directly against numpy.

Used for the two learned calibration models: M2 maps a screen point to sim
(x, y) and borrows z from the height grid, M3 maps a screen point straight to
sim (x, y, z).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .calibration import HeightGrid, interp_height
from .kinematics import ContractError

M2_LAYERS = (2, 16, 2)
M3_LAYERS = (2, 64, 3)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass
class Mlp:
    """Affine layers with ReLU between them and an identity output.

    ``weights[l]`` has shape (fan_in, fan_out), so a batch goes through as
    ``x @ W + b``.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ContractError("need one bias per weight matrix")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ContractError(f"layer {l}: weight/bias shapes {W.shape}, {b.shape}")
            if l and W.shape[0] != self.weights[l - 1].shape[1]:
                raise ContractError(f"layer {l}: incompatible with the previous layer")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "Mlp":
        return Mlp([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_mlp(layer_sizes: Sequence[int], rng_seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(rng_seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases)


def mlp_forward(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.weights[0].shape[0]:
        raise ContractError(f"input width {x.shape[-1]} != {net.weights[0].shape[0]}")
    h = x
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ W + b
        if l < last:
            h = np.maximum(h, 0.0)
    return h


def mlp_gradient(net: Mlp, X, Y) -> tuple[float, list[np.ndarray]]:
    """MSE (mean over samples and outputs) and its gradient, in ``params()`` order."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if len(X) == 0 or len(X) != len(Y):
        raise ContractError("batch must be nonempty with matching inputs and targets")
    if X.shape[1] != net.weights[0].shape[0] or Y.shape[1] != net.weights[-1].shape[1]:
        raise ContractError("batch dimensions do not match the network")
    acts = [X]
    pre = []
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ W + b
        pre.append(z)
        acts.append(np.maximum(z, 0.0) if l < last else z)
    err = acts[-1] - Y
    loss = float(np.mean(err * err))
    delta = 2.0 * err / err.size
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for l in range(last, -1, -1):
        grads[2 * l] = acts[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l:
            delta = (delta @ net.weights[l].T) * (pre[l - 1] > 0)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    batch_size: Optional[int] = 8  # None for full batch
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractError("beta1 and beta2 must lie in [0, 1)")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ContractError("batch_size must be positive")


class Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.epsilon)


def train_adam(net: Mlp, X, Y, cfg: TrainConfig = TrainConfig()) -> tuple[Mlp, list[float]]:
    """Train a copy of ``net``; returns it with the per-epoch training-set MSE."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ContractError("empty dataset")
    net = net.copy()
    params = net.params()
    opt = Adam(params, cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    n = len(X)
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = mlp_gradient(net, X[idx], Y[idx])
            opt.step(params, grads)
        err = mlp_forward(net, X) - Y
        loss = float(np.mean(err * err))
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, loss)
        trace.append(loss)
    return net, trace


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension min-max scaling of inputs and outputs onto [0, 1].

    A constant dimension keeps a unit span so it maps to 0 instead of NaN.
    """

    in_min: np.ndarray
    in_max: np.ndarray
    out_min: np.ndarray
    out_max: np.ndarray

    @classmethod
    def fit(cls, X, Y) -> "Normalizer":
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        return cls(X.min(axis=0), X.max(axis=0), Y.min(axis=0), Y.max(axis=0))

    @staticmethod
    def _span(lo, hi):
        span = hi - lo
        return np.where(span > 0, span, 1.0)

    def norm_in(self, X):
        return (np.asarray(X, dtype=float) - self.in_min) / self._span(self.in_min, self.in_max)

    def norm_out(self, Y):
        return (np.asarray(Y, dtype=float) - self.out_min) / self._span(self.out_min, self.out_max)

    def denorm_out(self, Yn):
        return np.asarray(Yn, dtype=float) * self._span(self.out_min, self.out_max) + self.out_min

    def denorm_in(self, Xn):
        return np.asarray(Xn, dtype=float) * self._span(self.in_min, self.in_max) + self.in_min

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("in_min", "in_max", "out_min", "out_max")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=float)
                     for k in ("in_min", "in_max", "out_min", "out_max")))


def normalized_mse(net: Mlp, normalizer: Normalizer, X, Y) -> float:
    err = mlp_forward(net, normalizer.norm_in(X)) - normalizer.norm_out(Y)
    return float(np.mean(err * err))


def fold_indices(n: int, k: int, rng_seed: int) -> list[np.ndarray]:
    if n < k:
        raise ContractError(f"dataset of {n} samples is too small for {k} folds")
    order = np.random.default_rng(rng_seed).permutation(n)
    return np.array_split(order, k)


def cross_validate(X, Y, layer_sizes: Sequence[int], cfg: TrainConfig = TrainConfig(),
                   k: int = 5) -> list[float]:
    """Held-out MSE per fold, in units normalized by the training split."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    folds = fold_indices(len(X), k, cfg.rng_seed)
    scores = []
    for f, val in enumerate(folds):
        train = np.concatenate([folds[i] for i in range(k) if i != f])
        normalizer = Normalizer.fit(X[train], Y[train])
        net = init_mlp(layer_sizes, cfg.rng_seed + 1 + f)
        fold_cfg = TrainConfig(**{**asdict(cfg), "rng_seed": cfg.rng_seed + 1 + f})
        net, _ = train_adam(net, normalizer.norm_in(X[train]), normalizer.norm_out(Y[train]),
                            fold_cfg)
        scores.append(normalized_mse(net, normalizer, X[val], Y[val]))
    return scores


@dataclass
class NetModel:
    """A trained network with its scaling; ``tag`` is "M2" or "M3"."""

    tag: str
    net: Mlp
    normalizer: Normalizer
    training: dict = field(default_factory=dict)

    def raw_predict(self, targets) -> np.ndarray:
        return self.normalizer.denorm_out(mlp_forward(self.net, self.normalizer.norm_in(targets)))

    def to_dict(self) -> dict:
        return {"tag": self.tag, "layer_sizes": self.net.layer_sizes,
                "weights": [W.tolist() for W in self.net.weights],
                "biases": [b.tolist() for b in self.net.biases],
                "normalizer": self.normalizer.to_dict(),
                "training": self.training}

    @classmethod
    def from_dict(cls, d: dict) -> "NetModel":
        net = Mlp([np.asarray(W, dtype=float) for W in d["weights"]],
                  [np.asarray(b, dtype=float) for b in d["biases"]])
        if net.layer_sizes != list(d["layer_sizes"]):
            raise ContractError("layer_sizes disagree with the weight arrays")
        return cls(d["tag"], net, Normalizer.from_dict(d["normalizer"]), d.get("training", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NetModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_model(tag: str, X, Y, cfg: TrainConfig = TrainConfig(),
              layer_sizes: Optional[Sequence[int]] = None) -> NetModel:
    """Normalize, initialize from ``cfg.rng_seed`` and train."""
    if layer_sizes is None:
        layer_sizes = {"M2": M2_LAYERS, "M3": M3_LAYERS}[tag]
    normalizer = Normalizer.fit(X, Y)
    net = init_mlp(layer_sizes, cfg.rng_seed)
    net, trace = train_adam(net, normalizer.norm_in(X), normalizer.norm_out(Y), cfg)
    meta = {"seed": cfg.rng_seed, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate, "beta1": cfg.beta1, "beta2": cfg.beta2,
            "epsilon": cfg.epsilon, "n_samples": int(len(X)), "final_loss": trace[-1]}
    return NetModel(tag, net, normalizer, meta)


def m2_predict(model: NetModel, grid: HeightGrid, target) -> np.ndarray:
    """Network sim (x, y); z interpolated from the grid at the predicted point."""
    xy = model.raw_predict(target)
    z = np.asarray(interp_height(grid, xy))
    return np.concatenate([xy, z[..., None]], axis=-1)


def m3_predict(model: NetModel, target) -> np.ndarray:
    return model.raw_predict(target)
