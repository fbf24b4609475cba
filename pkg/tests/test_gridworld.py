import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abx.errors import ConfigurationError, UsageError
from abx.gridworld import (DOWN, LEFT, RIGHT, UP, EnvConfig, GridPos, GridWorld, all_features,
                           features, position_of, state_index)


def test_defaults_follow_the_experiment_setup():
    cfg = EnvConfig()
    assert (cfg.width, cfg.height, cfg.max_episode_len) == (40, 40, 200)
    assert cfg.start == GridPos(0, 0)
    assert cfg.goal is None


def test_reset_returns_start():
    env = GridWorld()
    assert env.reset() == GridPos(0, 0)
    assert env.reset() == GridPos(0, 0)
    assert GridWorld(EnvConfig(start=(5, 5))).reset() == GridPos(5, 5)


def test_reset_zeroes_step_counter():
    env = GridWorld()
    env.reset()
    env.step(RIGHT)
    env.reset()
    assert env.steps_in_episode == 0


@pytest.mark.parametrize("bad", [dict(width=0), dict(max_episode_len=0), dict(start=(40, 0)),
                                 dict(goal=(-1, 3))])
def test_invalid_config(bad):
    with pytest.raises(ConfigurationError):
        EnvConfig(**bad)


def test_boundary_clip_and_unit_moves():
    env = GridWorld()
    env.reset()
    res = env.step(LEFT)
    assert res.next_state == GridPos(0, 0) and res.reward == 0 and not res.done
    assert env.step(DOWN).next_state == GridPos(0, 0)
    assert env.step(RIGHT).next_state == GridPos(1, 0)
    assert env.step(UP).next_state == GridPos(1, 1)


def test_goal_ends_episode_with_zero_reward():
    env = GridWorld(EnvConfig(goal=(0, 20), start=(0, 19)))
    env.reset()
    res = env.step(UP)
    assert res.done and res.reached_goal and res.reward == 0.0


def test_episode_cap_and_step_after_done():
    env = GridWorld(EnvConfig(max_episode_len=3))
    env.reset()
    assert [env.step(RIGHT).done for _ in range(3)] == [False, False, True]
    with pytest.raises(UsageError):
        env.step(RIGHT)


def test_invalid_action_and_unreset_env():
    env = GridWorld()
    with pytest.raises(UsageError):
        env.step(UP)
    env.reset()
    with pytest.raises(UsageError):
        env.step(4)


def test_state_index():
    cfg = EnvConfig()
    assert state_index(GridPos(0, 0), cfg) == 0
    assert state_index(GridPos(39, 39), cfg) == 1599
    assert all(state_index(position_of(i, cfg), cfg) == i for i in range(cfg.num_states))


def test_features_are_scaled_coordinates():
    cfg = EnvConfig(width=20, height=40)
    assert np.allclose(features(GridPos(10, 10), cfg), [0.5, 0.25])
    table = all_features(cfg)
    assert table.shape == (800, 2)
    assert np.array_equal(table[state_index(GridPos(7, 3), cfg)], features(GridPos(7, 3), cfg))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=400))
def test_random_walks_stay_inside_and_never_overrun(actions):
    cfg = EnvConfig(width=6, height=5, max_episode_len=50)
    env = GridWorld(cfg)
    env.reset()
    for a in actions:
        res = env.step(a)
        assert cfg.contains(res.next_state)
        assert res.reward == 0.0
        assert res.info_steps_in_episode <= cfg.max_episode_len
        # no goal: done only at the cap
        assert res.done == (res.info_steps_in_episode == cfg.max_episode_len)
        if res.done:
            env.reset()
