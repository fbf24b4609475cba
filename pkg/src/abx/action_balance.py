"""Per-action novelty bonuses at the current state and the behavior policy
built from them.

A distillation pair is fed (state features, embedded action). Training it
on the actions actually taken in a state lowers their bonus, so adding the
standardized bonus vector to the policy logits pushes sampling toward the
actions chosen least often there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from abx.approximator import ApproximatorSpec, DistillationPair, TrainReport, init_pair
from abx.errors import ConfigurationError, UsageError

NORMALIZE_EPS = 1e-8
DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class ActionEmbeddingScheme:
    kind: str
    k: int
    rows: int = 1
    cols: int = 1
    pad_value: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"action-space size must be >= 1, got {self.k}")
        if self.kind == "action_channel":
            if self.rows < 1 or self.cols < 1:
                raise ConfigurationError("action channel needs rows >= 1 and cols >= 1")
            if self.rows // self.k < 1:
                raise ConfigurationError(
                    f"action channel with {self.rows} rows cannot hold {self.k} actions")
        elif self.kind != "one_hot":
            raise ConfigurationError(f"unknown embedding kind {self.kind!r}")

    @property
    def size(self) -> int:
        return self.k if self.kind == "one_hot" else self.rows * self.cols

    @property
    def band(self) -> int:
        """Rows padded per action in the channel encoding."""
        return self.rows // self.k


def one_hot(k: int) -> ActionEmbeddingScheme:
    return ActionEmbeddingScheme("one_hot", k)


def action_channel(k: int, rows: int, cols: int, pad_value: float) -> ActionEmbeddingScheme:
    return ActionEmbeddingScheme("action_channel", k, rows, cols, pad_value)


def embed_action(a: int, scheme: ActionEmbeddingScheme) -> np.ndarray:
    """Unit vector for one_hot; for action_channel an m x n zero matrix whose
    rows a*q .. (a+1)*q - 1 are filled with the pad value, q = m // k."""
    if not 0 <= a < scheme.k:
        raise UsageError(f"action must be in [0, {scheme.k}), got {a}")
    if scheme.kind == "one_hot":
        e = np.zeros(scheme.k)
        e[a] = 1.0
        return e
    m = np.zeros((scheme.rows, scheme.cols))
    q = scheme.band
    m[a * q:(a + 1) * q, :] = scheme.pad_value
    return m


@dataclass
class BonusVector:
    values: np.ndarray
    state_tag: object = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise UsageError("bonus vector must be one-dimensional")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise UsageError("bonus entries must be finite and nonnegative")

    def __len__(self):
        return len(self.values)


@dataclass
class ActionBalancer:
    pair: DistillationPair
    schemes: tuple[ActionEmbeddingScheme, ...]
    state_dim: int
    action_block: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.schemes = tuple(self.schemes)
        ks = {s.k for s in self.schemes}
        if len(ks) != 1:
            raise ConfigurationError("all embedding schemes must share the action-space size")
        self.k = ks.pop()
        self.action_block = np.stack([
            np.concatenate([embed_action(a, s).ravel() for s in self.schemes])
            for a in range(self.k)])
        if self.pair.spec.input_dim != self.state_dim + self.action_block.shape[1]:
            raise ConfigurationError(
                f"pair input_dim {self.pair.spec.input_dim} != state {self.state_dim} "
                f"+ embedding {self.action_block.shape[1]}")

    def inputs(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != self.state_dim:
            raise UsageError(f"states must be (batch, {self.state_dim}), got {states.shape}")
        return np.concatenate([states, self.action_block[np.asarray(actions)]], axis=1)

    def _all_action_inputs(self, states: np.ndarray) -> np.ndarray:
        n = len(states)
        rep = np.repeat(states, self.k, axis=0)
        acts = np.tile(np.arange(self.k), n)
        return self.inputs(rep, acts)

    def action_bonus(self, s, a: int) -> float:
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (self.state_dim,):
            raise UsageError(f"state must have length {self.state_dim}, got shape {s.shape}")
        if not 0 <= a < self.k:
            raise UsageError(f"action must be in [0, {self.k}), got {a}")
        return float(self.pair.errors(self._all_action_inputs(s[None, :]))[a])

    def bonus_vector(self, s, state_tag=None) -> BonusVector:
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (self.state_dim,):
            raise UsageError(f"state must have length {self.state_dim}, got shape {s.shape}")
        return BonusVector(self.pair.errors(self._all_action_inputs(s[None, :])), state_tag)

    def bonus_table(self, states: np.ndarray) -> np.ndarray:
        """(n_states, k) array of bonuses for every action at every given state."""
        states = np.asarray(states, dtype=np.float64)
        return self.pair.errors(self._all_action_inputs(states)).reshape(len(states), self.k)

    def attach_states(self, states: np.ndarray) -> None:
        """Precompute inputs and (frozen) target outputs for a fixed, enumerable
        set of states so bonus rows can be served by index."""
        self._fixed_x = self._all_action_inputs(np.asarray(states, dtype=np.float64))
        self._fixed_t = self.pair.target.forward(self._fixed_x)

    def bonus_row(self, index: int) -> np.ndarray:
        """Bonus vector of attached state ``index``; same values as bonus_vector."""
        lo = index * self.k
        diff = self.pair.predictor.forward(self._fixed_x[lo:lo + self.k]) - self._fixed_t[lo:lo + self.k]
        return np.einsum("ij,ij->i", diff, diff)

    def attached_table(self) -> np.ndarray:
        diff = self.pair.predictor.forward(self._fixed_x) - self._fixed_t
        return np.einsum("ij,ij->i", diff, diff).reshape(-1, self.k)

    def train(self, states, actions, learning_rate: float, passes: int = 1,
              minibatch: int | None = None, rng: np.random.Generator | None = None) -> TrainReport:
        """Gradient passes over the taken (state, action) pairs. Returns a report
        whose error is the mean pre-step loss over all steps taken."""
        x = self.inputs(states, actions)
        if len(x) == 0:
            raise UsageError("balancer training needs at least one sample")
        size = minibatch or len(x)
        losses, last = [], None
        for _ in range(passes):
            order = rng.permutation(len(x)) if rng is not None else np.arange(len(x))
            for lo in range(0, len(x), size):
                last = self.pair.train_step(x[order[lo:lo + size]], learning_rate)
                losses.append(last.mean_squared_error_before)
        return TrainReport(float(np.mean(losses)), last.gradient_norm, last.step_count)


def make_balancer(state_dim: int, schemes: Sequence[ActionEmbeddingScheme], seed: int,
                  hidden_dim: int = 64, hidden_layers: int = 2, output_dim: int = 32,
                  optimizer: str = "adam") -> ActionBalancer:
    emb = sum(s.size for s in schemes)
    spec = ApproximatorSpec(state_dim + emb, hidden_dim, output_dim, hidden_layers)
    return ActionBalancer(init_pair(spec, seed, optimizer=optimizer), tuple(schemes), state_dim)


def normalize(v, eps: float = NORMALIZE_EPS) -> np.ndarray:
    """Standardize along the last axis: (v - mean) / (std + eps), or zeros where
    the entries are (numerically) all equal."""
    v = np.asarray(getattr(v, "values", v), dtype=np.float64)
    mean = v.mean(axis=-1, keepdims=True)
    std = v.std(axis=-1, keepdims=True)
    out = (v - mean) / (std + eps)
    return np.where(std < DEGENERATE_STD, 0.0, out)


class RunningNormalizer:
    """Alternative to per-vector standardization: shift and scale by running
    statistics of all bonus entries seen so far. Still order-preserving within
    a vector since it is affine with positive scale."""

    def __init__(self, eps: float = NORMALIZE_EPS):
        self.eps = eps
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values) -> None:
        values = np.asarray(values, dtype=np.float64).ravel()
        n = values.size
        if n == 0:
            return
        mean = float(values.mean())
        m2 = float(((values - mean) ** 2).sum())
        delta = mean - self.mean
        total = self.count + n
        self.m2 += m2 + delta * delta * self.count * n / total
        self.mean += delta * n / total
        self.count = total

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(getattr(v, "values", v), dtype=np.float64)
        std = math.sqrt(self.m2 / self.count) if self.count > 1 else 0.0
        if std < DEGENERATE_STD:
            return normalize(v, self.eps)
        return (v - self.mean) / (std + self.eps)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mix_policy(policy_logits, normalized_bonus) -> np.ndarray:
    """Behavior distribution softmax(logits + normalized bonus)."""
    logits = np.asarray(policy_logits, dtype=np.float64)
    bonus = np.asarray(normalized_bonus, dtype=np.float64)
    if logits.shape != bonus.shape:
        raise UsageError(f"shape mismatch: logits {logits.shape} vs bonus {bonus.shape}")
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(bonus))):
        raise UsageError("mix_policy inputs must be finite")
    return softmax(logits + bonus)


def entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return -(p * logp).sum(axis=-1)


def bonus_entropy(v) -> float:
    """Shannon entropy (nats) of softmax(normalize(v))."""
    return float(entropy(softmax(normalize(v))))


def balance_trial(balancer: ActionBalancer | None, state, logits, steps: int,
                  rng: np.random.Generator, learning_rate: float = 1e-3) -> np.ndarray:
    """Sample ``steps`` actions in one fixed state from the behavior policy,
    training the balancer on each taken action as it goes. With no balancer the
    bonus term is zero and sampling follows softmax(logits). Returns counts."""
    logits = np.asarray(logits, dtype=np.float64)
    state = np.asarray(state, dtype=np.float64)
    counts = np.zeros(len(logits), dtype=np.int64)
    for _ in range(steps):
        if balancer is None:
            probs = softmax(logits)
        else:
            probs = mix_policy(logits, normalize(balancer.bonus_vector(state)))
        a = int(rng.choice(len(probs), p=probs))
        counts[a] += 1
        if balancer is not None:
            balancer.train(state[None, :], [a], learning_rate)
    return counts
