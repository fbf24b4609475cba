"""Deterministic reward-free grid world with four movement actions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from abx.errors import ConfigurationError, UsageError

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTION_NAMES = ("up", "down", "left", "right")
MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))
NUM_ACTIONS = len(MOVES)


class GridPos(NamedTuple):
    x: int
    y: int


class StepResult(NamedTuple):
    next_state: GridPos
    reward: float
    done: bool
    info_steps_in_episode: int
    reached_goal: bool = False


@dataclass(frozen=True)
class EnvConfig:
    width: int = 40
    height: int = 40
    start: GridPos = GridPos(0, 0)
    max_episode_len: int = 200
    goal: Optional[GridPos] = None

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigurationError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if self.max_episode_len < 1:
            raise ConfigurationError("max_episode_len must be >= 1")
        object.__setattr__(self, "start", GridPos(*self.start))
        if not self.contains(self.start):
            raise ConfigurationError(f"start {tuple(self.start)} lies outside the grid")
        if self.goal is not None:
            object.__setattr__(self, "goal", GridPos(*self.goal))
            if not self.contains(self.goal):
                raise ConfigurationError(f"goal {tuple(self.goal)} lies outside the grid")

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def contains(self, pos) -> bool:
        return 0 <= pos[0] < self.width and 0 <= pos[1] < self.height


def state_index(pos, config: EnvConfig) -> int:
    """Row-major cell index: y * width + x."""
    return pos[1] * config.width + pos[0]


def position_of(index: int, config: EnvConfig) -> GridPos:
    return GridPos(index % config.width, index // config.width)


def features(pos, config: EnvConfig) -> np.ndarray:
    """Network input for a cell: coordinates scaled by the grid size."""
    return np.array([pos[0] / config.width, pos[1] / config.height])


def all_features(config: EnvConfig) -> np.ndarray:
    """Feature rows for every cell, ordered by state_index."""
    idx = np.arange(config.num_states)
    return np.stack([(idx % config.width) / config.width,
                     (idx // config.width) / config.height], axis=1)


class GridWorld:
    """Moves off the grid are clipped; the external reward is always zero.

    An episode ends when the goal (if any) is reached or after
    ``max_episode_len`` steps.
    """

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self.position: GridPos | None = None
        self.steps_in_episode = 0
        self.done = True

    def reset(self) -> GridPos:
        self.position = self.config.start
        self.steps_in_episode = 0
        self.done = False
        return self.position

    def step(self, action: int) -> StepResult:
        if self.position is None:
            raise UsageError("step() before reset()")
        if self.done:
            raise UsageError("step() after the episode ended; call reset()")
        if not 0 <= action < NUM_ACTIONS:
            raise UsageError(f"action must be in [0, {NUM_ACTIONS}), got {action}")
        cfg = self.config
        dx, dy = MOVES[action]
        x = min(max(self.position.x + dx, 0), cfg.width - 1)
        y = min(max(self.position.y + dy, 0), cfg.height - 1)
        self.position = GridPos(x, y)
        self.steps_in_episode += 1
        reached = self.position == cfg.goal
        self.done = reached or self.steps_in_episode >= cfg.max_episode_len
        return StepResult(self.position, 0.0, self.done, self.steps_in_episode, reached)

    def index(self, pos=None) -> int:
        pos = self.position if pos is None else pos
        return pos[1] * self.config.width + pos[0]


def reset(config: EnvConfig) -> tuple[GridWorld, GridPos]:
    env = GridWorld(config)
    return env, env.reset()
