"""Tests for the runner environments."""

import math

import numpy as np
import pytest

from src.envs.runner import (
    C_A,
    C_F,
    C_G,
    D_MAX,
    ENV_PRESETS,
    EnvSpec,
    RunnerState,
    make_env,
    oracle_action,
    render_state,
    reset,
    step,
)
from src.utils.errors import ConfigError, EnvUsageError

from .conftest import TINY_LIMIT, tiny_env


def test_reset_returns_uint8_frame(flat_spec):
    env = make_env(flat_spec)
    frame = reset(env, seed=3)
    assert frame.dtype == np.uint8
    assert frame.shape == (16, 16, 3)


def test_same_seed_same_trajectory(flat_spec):
    actions = np.random.default_rng(0).uniform(-1, 1, size=(TINY_LIMIT, 2))
    runs = []
    for _ in range(2):
        env = make_env(flat_spec)
        frames = [reset(env, seed=11)]
        rewards = []
        for a in actions:
            result = step(env, a)
            frames.append(result.observation)
            rewards.append(result.reward)
        runs.append((np.stack(frames), rewards))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_episode_ends_at_limit_and_rejects_further_steps(flat_spec):
    env = make_env(flat_spec)
    reset(env, seed=0)
    flags = [step(env, np.zeros(2)).discount_flag for _ in range(TINY_LIMIT)]
    assert flags[:-1] == [1.0] * (TINY_LIMIT - 1)
    assert flags[-1] == 0.0
    with pytest.raises(EnvUsageError):
        step(env, np.zeros(2))


def test_step_before_reset_is_usage_error(flat_spec):
    env = make_env(flat_spec)
    with pytest.raises(EnvUsageError):
        step(env, np.zeros(2))


def test_dynamics_match_closed_form():
    spec = tiny_env("downhill")
    env = make_env(spec)
    reset(env, seed=5)
    before = env.state
    action = np.array([0.5, -0.25])
    result = step(env, action)
    after = env.state

    velocity = before.velocity + C_A * action - np.array([spec.slope * C_G, 0.0]) - C_F * before.velocity
    position = np.clip(before.position + np.clip(velocity, -0.2, 0.2), -1.0, 1.0)
    assert np.allclose(after.position, position)
    expected = 1.0 - np.linalg.norm(position - before.goal) / D_MAX
    assert result.reward == pytest.approx(expected)


def test_reward_at_goal_is_one():
    spec = tiny_env("flat")
    env = make_env(spec)
    reset(env, seed=0)
    env._state = RunnerState(np.array([0.3, 0.3]), np.zeros(2), np.array([0.3, 0.3]))
    result = step(env, np.zeros(2))
    assert result.reward == pytest.approx(1.0)


def test_masked_dimension_has_no_effect():
    spec = tiny_env("nofoot")
    env_a, env_b = make_env(spec), make_env(spec)
    reset(env_a, seed=2)
    reset(env_b, seed=2)
    a = step(env_a, np.array([0.7, 1.0]))
    b = step(env_b, np.array([0.7, -1.0]))
    assert np.array_equal(a.observation, b.observation)
    assert a.reward == b.reward


def test_tint_changes_appearance_only():
    flat, tinted = tiny_env("flat"), tiny_env("tinted")
    env_f, env_t = make_env(flat), make_env(tinted)
    frame_f, frame_t = reset(env_f, seed=9), reset(env_t, seed=9)
    assert not np.array_equal(frame_f, frame_t)
    assert step(env_f, np.ones(2)).reward == step(env_t, np.ones(2)).reward


def test_render_is_pure_function_of_state(flat_spec):
    env = make_env(flat_spec)
    reset(env, seed=1)
    rows, cols = np.mgrid[0:16, 0:16]
    again = render_state(env.state, flat_spec, rows, cols, 1, np.full(3, 64, dtype=np.uint8))
    assert np.array_equal(env.render(), again)


def test_oracle_beats_random(flat_spec):
    rng = np.random.default_rng(0)
    totals = {"oracle": 0.0, "random": 0.0}
    for policy in totals:
        env = make_env(tiny_env("downhill", episode_limit=60))
        reset(env, seed=4)
        for _ in range(60):
            action = oracle_action(env) if policy == "oracle" else rng.uniform(-1, 1, size=2)
            totals[policy] += step(env, action).reward
    assert totals["oracle"] > totals["random"]


@pytest.mark.parametrize("name", sorted(ENV_PRESETS))
def test_presets_are_valid(name):
    spec = EnvSpec.preset(name)
    assert spec.validate() == []
    assert EnvSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("overrides, field", [
    ({"image_size": 4}, "image_size"),
    ({"episode_limit": 0}, "episode_limit"),
    ({"masked_action_dims": (2,)}, "masked_action_dims"),
    ({"action_dim": 3}, "action_dim"),
])
def test_invalid_spec_names_field(overrides, field):
    with pytest.raises(ConfigError) as excinfo:
        EnvSpec(**overrides)
    assert field in str(excinfo.value)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        EnvSpec.preset("sideways")


def test_d_max_is_arena_diagonal():
    assert D_MAX == pytest.approx(2 * math.sqrt(2))
