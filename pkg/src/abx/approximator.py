"""Small fully-connected networks with hand-derived gradients, and the
target/predictor distillation pair built on top of them.

Parameters of a network live in one flat float64 vector; layer weights and
biases are views into it. That keeps optimizer state, finite-difference
checks and binary snapshots trivial.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from abx.errors import ConfigurationError, UsageError

ACTIVATIONS = ("relu", "tanh")

SNAPSHOT_MAGIC = b"ABXP"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class ApproximatorSpec:
    input_dim: int
    hidden_dim: int = 64
    output_dim: int = 32
    hidden_layers: int = 2
    activation: str = "relu"

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "output_dim", "hidden_layers"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * self.hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(kind, z, a):
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - a * a


class MLP:
    """Feedforward map: hidden layers with a nonlinearity, linear output."""

    def __init__(self, spec: ApproximatorSpec, params: np.ndarray | None = None):
        self.spec = spec
        if params is None:
            params = np.zeros(spec.param_count)
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (spec.param_count,):
            raise UsageError(f"expected {spec.param_count} parameters, got shape {params.shape}")
        self.params = params
        self.layers = []
        offset = 0
        for fan_in, fan_out in spec.layer_shapes:
            w = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = params[offset:offset + fan_out]
            offset += fan_out
            self.layers.append((w, b))
        self._cache = None

    @classmethod
    def initialized(cls, spec: ApproximatorSpec, rng: np.random.Generator, output_scale: float = 1.0):
        """Uniform fan-in init: every weight and bias drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        net = cls(spec)
        last = len(net.layers) - 1
        for i, (w, b) in enumerate(net.layers):
            bound = 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)
            if i == last and output_scale != 1.0:
                w *= output_scale
                b *= output_scale
        return net

    def copy(self) -> "MLP":
        return MLP(self.spec, self.params.copy())

    def forward(self, x: np.ndarray, keep: bool = False) -> np.ndarray:
        """Map a (batch, input_dim) array to (batch, output_dim).

        With keep=True the activations are stored for a following backward().
        """
        kind = self.spec.activation
        h = x
        cache = [] if keep else None
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            z = h @ w + b
            if i == last:
                if keep:
                    cache.append((h, None, None))
                h = z
            else:
                a = _act(kind, z)
                if keep:
                    cache.append((h, z, a))
                h = a
        self._cache = cache
        return h

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Flat parameter gradient given dLoss/dOutput for the last kept forward."""
        if self._cache is None:
            raise UsageError("backward() needs a preceding forward(..., keep=True)")
        kind = self.spec.activation
        grads = []
        delta = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            h_in, _, _ = self._cache[i]
            w, _ = self.layers[i]
            grads.append((h_in.T @ delta, delta.sum(axis=0)))
            if i > 0:
                _, z, a = self._cache[i - 1]
                delta = (delta @ w.T) * _act_grad(kind, z, a)
        grads.reverse()
        self._cache = None
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


class Adam:
    """Per-parameter first/second moment accumulation over a flat vector."""

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, size: int):
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        params -= lr * grad


def make_optimizer(name: str, size: int):
    if name == "adam":
        return Adam(size)
    if name == "sgd":
        return SGD(size)
    raise ConfigurationError(f"unknown optimizer {name!r}")


def clip_by_norm(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.sqrt(grad @ grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


def _seed_sequences(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF).spawn(n)


@dataclass
class TrainReport:
    mean_squared_error_before: float
    gradient_norm: float
    step_count: int


@dataclass
class DistillationPair:
    """Frozen random target network and a trainable predictor of the same shape.

    The prediction error of the predictor on an input shrinks the more often
    that input has been trained on, which is what turns it into a novelty
    signal.
    """

    spec: ApproximatorSpec
    target: MLP
    predictor: MLP
    seed: int | None
    optimizer: object = field(repr=False, default=None)
    steps: int = 0

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise UsageError(f"input must have length {self.spec.input_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise UsageError("input contains non-finite values")
        return x

    def errors(self, xs) -> np.ndarray:
        """Squared prediction error for each row of a (batch, input_dim) array."""
        xs = self._check_input(xs)
        diff = self.predictor.forward(xs) - self.target.forward(xs)
        return np.einsum("ij,ij->i", diff, diff)

    def prediction_error(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise UsageError("prediction_error takes a single input vector")
        return float(self.errors(x)[0])

    def loss_and_grad(self, batch) -> tuple[float, np.ndarray]:
        """Mean over the batch of the per-sample squared error, and its gradient
        with respect to the predictor parameters."""
        xs = self._check_input(batch)
        target = self.target.forward(xs)
        diff = self.predictor.forward(xs, keep=True) - target
        loss = float(np.einsum("ij,ij->", diff, diff)) / len(xs)
        grad = self.predictor.backward(2.0 * diff / len(xs))
        return loss, grad

    def train_step(self, batch, learning_rate: float) -> TrainReport:
        if len(batch) == 0:
            raise UsageError("train_step needs a non-empty batch")
        if not np.isfinite(learning_rate) or learning_rate < 0:
            raise UsageError(f"learning rate must be finite and >= 0, got {learning_rate}")
        loss, grad = self.loss_and_grad(batch)
        self.optimizer.step(self.predictor.params, grad, learning_rate)
        self.steps += 1
        return TrainReport(loss, float(np.sqrt(grad @ grad)), self.steps)

    def clone_predictor_from_target(self) -> None:
        self.predictor.params[...] = self.target.params

    def save(self, path) -> None:
        """Write a little-endian snapshot: magic, version, dims, target then predictor floats."""
        s = self.spec
        header = SNAPSHOT_MAGIC + struct.pack(
            "<6I", SNAPSHOT_VERSION, s.input_dim, s.hidden_dim, s.output_dim,
            s.hidden_layers, ACTIVATIONS.index(s.activation))
        body = (self.target.params.astype("<f8").tobytes()
                + self.predictor.params.astype("<f8").tobytes())
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(header + body)
        tmp.replace(path)


def _frozen(net: MLP) -> MLP:
    net.params.flags.writeable = False
    for w, b in net.layers:
        w.flags.writeable = False
        b.flags.writeable = False
    return net


def init_pair(spec: ApproximatorSpec, seed: int, optimizer: str = "adam") -> DistillationPair:
    """Target and predictor drawn from two independent streams of the same seed."""
    target_seq, predictor_seq = _seed_sequences(seed, 2)
    target = _frozen(MLP.initialized(spec, np.random.default_rng(target_seq)))
    predictor = MLP.initialized(spec, np.random.default_rng(predictor_seq))
    return DistillationPair(spec, target, predictor, int(seed),
                            make_optimizer(optimizer, spec.param_count))


def load_pair(path, optimizer: str = "adam") -> DistillationPair:
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise UsageError(f"{path}: not a parameter snapshot")
    version, d_in, d_h, d_out, layers, act = struct.unpack("<6I", raw[4:28])
    if version != SNAPSHOT_VERSION:
        raise UsageError(f"{path}: unsupported snapshot version {version}")
    spec = ApproximatorSpec(d_in, d_h, d_out, layers, ACTIVATIONS[act])
    values = np.frombuffer(raw[28:], dtype="<f8").astype(np.float64)
    n = spec.param_count
    if values.size != 2 * n:
        raise UsageError(f"{path}: truncated snapshot")
    target = _frozen(MLP(spec, values[:n].copy()))
    predictor = MLP(spec, values[n:].copy())
    return DistillationPair(spec, target, predictor, None, make_optimizer(optimizer, n))
