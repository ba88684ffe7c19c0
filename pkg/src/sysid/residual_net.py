"""A 4-8-2 LeakyReLU perceptron trained full-batch with Adam.

The network maps ``[v_x, v_y, omega, delta]`` to the nominal model's
one-step error ``[e_vy, e_omega]``. It is small enough (58 parameters) that
plain numpy with hand-written backprop is both fast and easy to audit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError

N_IN, N_HIDDEN, N_OUT = 4, 8, 2
SHAPES = {"W1": (N_HIDDEN, N_IN), "b1": (N_HIDDEN,), "W2": (N_OUT, N_HIDDEN), "b2": (N_OUT,)}
N_PARAMS = sum(int(np.prod(s)) for s in SHAPES.values())
LEAKY_SLOPE = 0.01
OUTPUT_INIT_GAIN = 0.01


@dataclass
class MlpWeights:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name, shape in SHAPES.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)

    @property
    def n_params(self) -> int:
        return sum(getattr(self, k).size for k in SHAPES)

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in SHAPES])

    @classmethod
    def unflatten(cls, theta) -> "MlpWeights":
        theta = np.asarray(theta, dtype=float)
        if theta.size != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} parameters, got {theta.size}")
        parts, i = {}, 0
        for name, shape in SHAPES.items():
            n = int(np.prod(shape))
            parts[name] = theta[i:i + n].reshape(shape).copy()
            i += n
        return cls(**parts)

    @classmethod
    def zeros(cls) -> "MlpWeights":
        return cls.unflatten(np.zeros(N_PARAMS))


@dataclass
class Normalizer:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if np.any(self.scale <= 0):
            raise ValueError("normalizer scale must be > 0")

    @classmethod
    def fit(cls, inputs) -> "Normalizer":
        inputs = np.asarray(inputs, dtype=float)
        std = inputs.std(axis=0)
        return cls(inputs.mean(axis=0), np.where(std > 1e-12, std, 1.0))

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(np.zeros(N_IN), np.ones(N_IN))

    def __call__(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    leaky_slope: float = LEAKY_SLOPE
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def init(seed, output_gain=OUTPUT_INIT_GAIN) -> MlpWeights:
    """Uniform weights scaled by ``1/sqrt(fan_in)``, zero biases.

    The output layer is shrunk by ``output_gain`` so that a fresh network
    predicts errors near zero; the targets are physical one-step errors of a
    few millimetres per second, far below the unit-scale output a standard
    initialization produces.
    """
    rng = np.random.default_rng(seed)
    W1 = rng.uniform(-1, 1, SHAPES["W1"]) / np.sqrt(N_IN)
    W2 = output_gain * rng.uniform(-1, 1, SHAPES["W2"]) / np.sqrt(N_HIDDEN)
    return MlpWeights(W1, np.zeros(N_HIDDEN), W2, np.zeros(N_OUT))


def leaky_relu(z, slope=LEAKY_SLOPE):
    return np.maximum(z, slope * z)


def forward(w: MlpWeights, x, slope=LEAKY_SLOPE):
    """Network output for one input (shape ``(4,)``) or a batch ``(N, 4)``."""
    x = np.asarray(x, dtype=float)
    h = leaky_relu(x @ w.W1.T + w.b1, slope)
    return h @ w.W2.T + w.b2


def mse(w: MlpWeights, x, y, slope=LEAKY_SLOPE) -> float:
    return float(np.mean((forward(w, x, slope) - y) ** 2))


def _loss_and_grads(params, xt, yt, slope):
    # Feature-major layout: xt is (4, N), yt is (2, N).
    W1, b1, W2, b2 = params
    z = W1 @ xt
    z += b1[:, None]
    h = np.maximum(z, slope * z)
    diff = W2 @ h
    diff += b2[:, None]
    diff -= yt
    n = diff.size
    loss = float(np.einsum("ij,ij->", diff, diff)) / n
    d_out = diff * (2.0 / n)
    d_z = W2.T @ d_out
    d_z *= (z > 0) * (1.0 - slope) + slope
    return loss, [d_z @ xt.T, d_z.sum(axis=1), d_out @ h.T, d_out.sum(axis=1)]


def gradient(w: MlpWeights, x, y, slope=LEAKY_SLOPE):
    """Loss and exact gradient of the MSE over all samples and outputs.

    Returns ``(loss, grads)`` with ``grads`` an :class:`MlpWeights` holding
    the partial derivatives.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(x) == 0:
        raise DataError("empty batch")
    loss, g = _loss_and_grads([w.W1, w.b1, w.W2, w.b2], x.T, y.T, slope)
    return loss, MlpWeights(*g)


def train(w: MlpWeights, x, y, cfg: TrainConfig = TrainConfig()):
    """Full-batch Adam on the MSE. Returns ``(weights, loss_trace)``.

    ``loss_trace[i]`` is the loss before update ``i``; the final entry is the
    loss of the returned weights.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if len(x) == 0:
        raise DataError("cannot train on an empty dataset")
    xt, yt = np.ascontiguousarray(x.T), np.ascontiguousarray(y.T)
    params = [w.W1.copy(), w.b1.copy(), w.W2.copy(), w.b2.copy()]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    trace = np.empty(cfg.epochs + 1)
    b1, b2, lr, eps = cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.eps
    for epoch in range(cfg.epochs):
        loss, grads = _loss_and_grads(params, xt, yt, cfg.leaky_slope)
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite training loss {loss} at epoch {epoch}")
        trace[epoch] = loss
        c1 = 1 - b1 ** (epoch + 1)
        c2 = 1 - b2 ** (epoch + 1)
        for p, g, m_i, v_i in zip(params, grads, m, v):
            m_i *= b1
            m_i += (1 - b1) * g
            v_i *= b2
            v_i += (1 - b2) * g * g
            p -= lr * (m_i / c1) / (np.sqrt(v_i / c2) + eps)
    out = MlpWeights(*params)
    trace[-1] = mse(out, x, y, cfg.leaky_slope)
    if not np.isfinite(trace[-1]):
        raise NumericalError(f"non-finite training loss {trace[-1]} at epoch {cfg.epochs}")
    return out, trace


@dataclass
class ResidualNet:
    """Trained weights together with the input normalizer they expect."""

    weights: MlpWeights
    normalizer: Normalizer = field(default_factory=Normalizer.identity)
    config: TrainConfig = field(default_factory=TrainConfig)

    def __call__(self, raw_inputs):
        return forward(self.weights, self.normalizer(raw_inputs), self.config.leaky_slope)

    @classmethod
    def zero(cls) -> "ResidualNet":
        return cls(MlpWeights.zeros())

    @classmethod
    def fit(cls, inputs, targets, cfg: TrainConfig = TrainConfig()):
        """Standardize inputs, initialize from ``cfg.seed`` and train.

        Returns ``(net, loss_trace)``.
        """
        norm = Normalizer.fit(inputs)
        w, trace = train(init(cfg.seed), norm(inputs), targets, cfg)
        return cls(w, norm, cfg), trace

    def to_dict(self) -> dict:
        return {
            "normalizer": {"channels": ["v_x", "v_y", "omega", "delta"],
                           "mean": self.normalizer.mean.tolist(),
                           "scale": self.normalizer.scale.tolist()},
            "layers": {name: list(shape) for name, shape in SHAPES.items()},
            "weights": {name: getattr(self.weights, name).ravel().tolist() for name in SHAPES},
            "train_config": asdict(self.config),
            "seed": self.config.seed,
        }

    @classmethod
    def from_dict(cls, d) -> "ResidualNet":
        w = MlpWeights(**{k: np.asarray(d["weights"][k]).reshape(SHAPES[k]) for k in SHAPES})
        norm = Normalizer(d["normalizer"]["mean"], d["normalizer"]["scale"])
        return cls(w, norm, TrainConfig(**d.get("train_config", {})))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "ResidualNet":
        return cls.from_dict(json.loads(Path(path).read_text()))
