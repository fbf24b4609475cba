"""Next-state novelty bonuses.

Two estimators share one interface: ``intrinsic_bonus`` is pure and
``observe`` records a visit. The tabular estimator keys exact visit counts
by cell; the neural one scores a cell by the prediction error of a
distillation pair and queues visited cells for the next training pass.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from abx.approximator import ApproximatorSpec, DistillationPair, TrainReport, init_pair
from abx.errors import UsageError
from abx.gridworld import EnvConfig, features, position_of


@dataclass(frozen=True)
class CombinedReward:
    external: float
    intrinsic: float
    combined: float


def combine(external: float, intrinsic: float) -> CombinedReward:
    if not (math.isfinite(external) and math.isfinite(intrinsic)):
        raise UsageError(f"non-finite reward: external={external}, intrinsic={intrinsic}")
    return CombinedReward(external, intrinsic, external + intrinsic)


class NoveltyEstimator:
    variant: str

    def intrinsic_bonus(self, pos) -> float:
        raise NotImplementedError

    def observe(self, pos) -> None:
        raise NotImplementedError

    def train(self, learning_rate: float) -> TrainReport | None:
        """Consume whatever was observed since the last call. Returns None when
        there is nothing trainable."""
        return None


class TabularNovelty(NoveltyEstimator):
    """Bonus 1/sqrt(n + 1) where n is the visit count of the cell."""

    variant = "tabular"

    def __init__(self, config: EnvConfig):
        self.config = config
        self._counts = [0] * config.num_states

    @property
    def counts(self) -> np.ndarray:
        return np.array(self._counts, dtype=np.int64)

    def count(self, pos) -> int:
        return self._counts[pos[1] * self.config.width + pos[0]]

    def intrinsic_bonus(self, pos) -> float:
        return 1.0 / math.sqrt(self._counts[pos[1] * self.config.width + pos[0]] + 1)

    def observe(self, pos) -> None:
        self._counts[pos[1] * self.config.width + pos[0]] += 1

    def export_csv(self, path) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["state_index", "x", "y", "count"])
            for i, n in enumerate(self._counts):
                p = position_of(i, self.config)
                writer.writerow([i, p.x, p.y, n])
        os.replace(tmp, path)


class RunningStd:
    """Running variance of a scalar stream (parallel-merge update)."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, values) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return
        n = values.size
        mean = float(values.mean())
        m2 = float(((values - mean) ** 2).sum())
        delta = mean - self.mean
        total = self.count + n
        self.m2 += m2 + delta * delta * self.count * n / total
        self.mean += delta * n / total
        self.count = total

    @property
    def std(self) -> float:
        if self.count < 2:
            return 1.0
        return math.sqrt(self.m2 / self.count)


class NeuralNovelty(NoveltyEstimator):
    variant = "neural"

    def __init__(self, config: EnvConfig, pair: DistillationPair, normalize: bool = False):
        if pair.spec.input_dim != 2:
            raise UsageError("neural novelty expects a pair over 2-d cell features")
        self.config = config
        self.pair = pair
        self.normalize = normalize
        self.pending: list[np.ndarray] = []
        self._rms = RunningStd()

    def raw_bonus(self, pos) -> float:
        return self.pair.prediction_error(features(pos, self.config))

    def intrinsic_bonus(self, pos) -> float:
        value = self.raw_bonus(pos)
        if self.normalize:
            value /= self._rms.std + 1e-8
        return value

    def observe(self, pos) -> None:
        self.pending.append(features(pos, self.config))

    def train(self, learning_rate: float) -> TrainReport | None:
        if not self.pending:
            return None
        batch = np.array(self.pending)
        self.pending = []
        if self.normalize:
            self._rms.update(self.pair.errors(batch))
        return self.pair.train_step(batch, learning_rate)


def make_novelty(variant: str, config: EnvConfig, seed: int = 0, spec: ApproximatorSpec | None = None,
                 normalize: bool = False, optimizer: str = "adam") -> NoveltyEstimator:
    if variant == "tabular":
        return TabularNovelty(config)
    if variant == "neural":
        pair = init_pair(spec or ApproximatorSpec(input_dim=2), seed, optimizer=optimizer)
        return NeuralNovelty(config, pair, normalize=normalize)
    raise UsageError(f"unknown novelty variant {variant!r}")


def intrinsic_bonus(est: NoveltyEstimator, pos) -> float:
    return est.intrinsic_bonus(pos)


def observe(est: NoveltyEstimator, pos) -> None:
    est.observe(pos)
