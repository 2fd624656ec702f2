"""Shared fixtures: tiny configs, envs and datasets."""

from dataclasses import replace

import numpy as np
import pytest

from src.config.settings import (
    BehaviorConfig,
    CoTrainConfig,
    CoWorldConfig,
    DatasetConfig,
    EvalConfig,
    ModelConfig,
    TrainingConfig,
)
from src.data.episode import save_episode
from src.envs.runner import EnvSpec, make_env
from src.training.agent import collect_episode
from src.utils.fs import write_json


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance run, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY_LIMIT = 12


def tiny_env(name: str = "flat", seed: int = 0, **overrides) -> EnvSpec:
    options = {"image_size": 16, "episode_limit": TINY_LIMIT}
    options.update(overrides)
    return EnvSpec.preset(name, seed=seed, **options)


def tiny_config(**sections) -> CoWorldConfig:
    config = CoWorldConfig(
        seed=0,
        source_env=tiny_env("flat"),
        target_env=tiny_env("downhill"),
        model=ModelConfig(deter_size=16, latent_groups=4, latent_classes=4, hidden_size=16, cnn_depth=4),
        behavior=BehaviorConfig(horizon=3, hidden_size=16, slow_target_update=2),
        cotrain=CoTrainConfig(target_steps=2, source_steps=2, pretrain_steps=2, outer_iterations=1,
                              collect_every=1),
        training=TrainingConfig(batch_size=2, seq_len=5, buffer_capacity=1000, prefill_episodes=1),
        dataset=DatasetConfig(budget_steps=3 * TINY_LIMIT, oracle_episodes=2, eval_episodes=2,
                              updates_per_episode=1),
        evaluation=EvalConfig(eval_every=1, episodes=2, value_horizon=10, open_loop_context=2,
                              open_loop_horizon=3),
    )
    return replace(config, **sections)


def random_episodes(env_spec: EnvSpec, count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    env = make_env(env_spec)
    return [collect_episode(None, env, seed + i, rng=rng) for i in range(count)]


def write_dataset(directory, env_spec: EnvSpec, episodes):
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, episode in enumerate(episodes):
        name = f"episode_{i:05d}.cwep"
        save_episode(episode, directory / name)
        entries.append({"file": name, "length": len(episode), "seed": episode.seed})
    write_json(directory / "manifest.json", {"schema": 1, "env_spec": env_spec.to_dict(), "episodes": entries})
    return directory


@pytest.fixture
def config():
    return tiny_config()


@pytest.fixture
def flat_spec():
    return tiny_env("flat")


@pytest.fixture
def dataset_dir(tmp_path, config):
    episodes = random_episodes(config.target_env, 3, seed=100)
    return write_dataset(tmp_path / "dataset", config.target_env, episodes)
