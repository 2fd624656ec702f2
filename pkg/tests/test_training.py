"""Tests for agent bundles, reward relabeling and the co-training pipeline."""

import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from src.config.settings import apply_ablation
from src.data.replay import ReplayBuffer
from src.envs import runner
from src.training import coworld
from src.training.agent import (
    SOURCE,
    TARGET,
    AgentBundle,
    load_checkpoint,
    save_checkpoint,
    train_online,
)
from src.training.coworld import (
    CHECKPOINT_SUFFIX,
    METRIC_COLUMNS,
    coworld_train,
    relabel_rewards,
    relabel_source_rewards,
    reward_mle_loss,
    reward_nll,
    setup_source,
    train_source_iteration,
    train_target_iteration,
)
from src.utils.container import CHECKPOINT_MAGIC, read_container, write_container
from src.utils.errors import (
    ConfigError,
    EmptyDatasetError,
    FormatError,
    NumericError,
    OutputExistsError,
)
from src.utils.seeding import make_generator

from .conftest import random_episodes, tiny_config, write_dataset


@pytest.fixture
def offline(config):
    return ReplayBuffer.offline(random_episodes(config.target_env, 2, seed=40))


@pytest.fixture
def target_batch(config, offline):
    bundle = AgentBundle(TARGET, config)
    return bundle.to_torch(offline.sample_sequences(2, 5, np.random.default_rng(0)))


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), lines[1:]


# Reward relabeling ----------------------------------------------------------

@pytest.mark.parametrize("k", [0.0, 0.2, 0.5, 0.8, 1.0])
def test_relabel_is_convex_blend(k):
    rng = np.random.default_rng(int(k * 10))
    predicted, true = rng.normal(size=20), rng.normal(size=20)
    blended = relabel_rewards(predicted, true, k)
    assert np.allclose(blended, k * predicted + (1 - k) * true)
    low, high = np.minimum(predicted, true), np.maximum(predicted, true)
    assert np.all(blended >= low - 1e-12) and np.all(blended <= high + 1e-12)


def test_relabel_endpoints():
    predicted, true = np.array([1.0, 2.0]), np.array([3.0, 4.0])
    assert np.array_equal(relabel_rewards(predicted, true, 0.0), true)
    assert np.array_equal(relabel_rewards(predicted, true, 1.0), predicted)


@pytest.mark.parametrize("k", [-0.1, 1.1])
def test_relabel_rejects_out_of_range_k(k):
    with pytest.raises(ConfigError):
        relabel_rewards(np.zeros(2), np.zeros(2), k)


def test_source_batches_keep_their_rewards(config, target_batch):
    source = AgentBundle(SOURCE, config)
    rewards = relabel_source_rewards(target_batch, SOURCE, source.world_model, 0.2)
    assert rewards is target_batch["rewards"]


def test_target_batches_blend_source_prediction(config, target_batch):
    source = AgentBundle(SOURCE, config)
    wm = source.world_model
    rewards = relabel_source_rewards(target_batch, TARGET, wm, 0.2, make_generator(3))
    with torch.no_grad():
        posterior, _, _ = wm.observe(target_batch["observations"], target_batch["actions"],
                                     target_batch["is_first"], make_generator(3))
        predicted = wm.predict_reward(posterior)
    assert torch.allclose(rewards, 0.2 * predicted + 0.8 * target_batch["rewards"])
    assert not rewards.requires_grad


def test_unknown_batch_origin(config, target_batch):
    with pytest.raises(ConfigError):
        relabel_source_rewards(target_batch, "both", AgentBundle(SOURCE, config).world_model, 0.2)


def test_reward_nll_closed_form(config, target_batch):
    wm = AgentBundle(SOURCE, config).world_model
    posterior, _, _ = wm.observe(target_batch["observations"], target_batch["actions"],
                                 target_batch["is_first"], make_generator(0))
    rewards = target_batch["rewards"]
    got = reward_nll(wm, posterior, rewards, target_batch["is_first"]).item()

    predicted = wm.predict_reward(posterior).detach().numpy().astype(np.float64)
    valid = ~target_batch["is_first"].numpy()
    nll = 0.5 * (predicted - rewards.numpy()) ** 2 + 0.5 * math.log(2 * math.pi)
    assert got == pytest.approx(nll[valid].mean(), rel=1e-5)


def test_reward_mle_without_target_batch(config, target_batch):
    wm = AgentBundle(SOURCE, config).world_model
    loss, metrics = reward_mle_loss(wm, target_batch, None, None, make_generator(0))
    assert metrics["target_reward_nll"] == 0.0
    assert loss.item() == pytest.approx(metrics["source_reward_nll"])


def test_reward_mle_needs_rewards_for_target_batch(config, target_batch):
    wm = AgentBundle(SOURCE, config).world_model
    with pytest.raises(ConfigError):
        reward_mle_loss(wm, target_batch, target_batch, None)


# Stage isolation --------------------------------------------------------------

def test_target_iteration_reads_but_never_writes_source(config, offline):
    rng = np.random.default_rng(0)
    source, target = AgentBundle(SOURCE, config), AgentBundle(TARGET, config)
    source_digest, target_digest = source.param_digest(), target.param_digest()

    metrics = train_target_iteration(config, target, source, offline, rng, make_generator(0))
    assert source.param_digest() == source_digest
    assert target.param_digest() != target_digest
    assert metrics["domain_kl_loss"] >= 0.0
    assert 0.0 <= metrics["fraction_clamped"] <= 1.0


def test_target_iteration_requires_source_when_regularized(config, offline):
    with pytest.raises(ConfigError):
        train_target_iteration(config, AgentBundle(TARGET, config), None, offline, np.random.default_rng(0))


def test_offline_baseline_trains_without_source(config, offline):
    config = apply_ablation(config, "offline_baseline")
    metrics = train_target_iteration(config, AgentBundle(TARGET, config), None, offline,
                                     np.random.default_rng(0), make_generator(0))
    assert metrics["domain_kl_loss"] == 0.0
    assert metrics["regularizer"] == 0.0


def test_source_iteration_leaves_offline_data_and_target_alone(config, offline):
    rng = np.random.default_rng(1)
    source, target = AgentBundle(SOURCE, config), AgentBundle(TARGET, config)
    setup_source(config, source, rng)
    target_digest = target.param_digest()
    episodes_before = offline.episodes()
    steps_before = source.buffer.num_steps

    metrics = train_source_iteration(config, source, offline, rng, make_generator(1))
    assert target.param_digest() == target_digest
    assert offline.episodes() == episodes_before
    assert source.buffer.num_steps > steps_before
    assert metrics["source_buffer_steps"] == source.buffer.num_steps
    assert "source_reward_mle_before" in metrics and "source_reward_mle_after" in metrics
    assert metrics["target_reward_nll"] > 0.0


def test_slow_critic_follows_schedule(config, offline):
    target = AgentBundle(TARGET, config)
    config_no_source = apply_ablation(config, "offline_baseline")
    before = target.param_digest("slow_critic")
    train_target_iteration(config_no_source, target, None, offline, np.random.default_rng(0),
                           make_generator(0))
    assert target.updates == config.cotrain.target_steps
    assert target.param_digest("slow_critic") != before
    for fast, slow in zip(target.critic.parameters(), target.slow_critic.parameters()):
        assert torch.equal(fast, slow)


# Online rounds ------------------------------------------------------------------

def test_online_rounds_cap_the_last_round(config):
    bundle = AgentBundle(SOURCE, config)
    env = runner.make_env(config.source_env)
    buffer = ReplayBuffer(config.training.buffer_capacity)
    calls = []

    rounds = list(train_online(bundle, env, buffer, np.random.default_rng(0), 2, total_updates=3,
                               update=lambda: calls.append(len(buffer)) or {"loss": 1.0}))
    assert [len(metrics) for _, metrics in rounds] == [2, 1]
    assert len(buffer) == 2
    # every update sees the episode collected just before it
    assert calls == [1, 1, 2]


def test_online_rounds_run_real_updates(config):
    bundle = AgentBundle(SOURCE, config)
    env = runner.make_env(config.source_env)
    buffer = ReplayBuffer(config.training.buffer_capacity)
    rounds = train_online(bundle, env, buffer, np.random.default_rng(0), 1, total_updates=2,
                          generator=make_generator(0))
    metrics = [m for _, round_metrics in rounds for m in round_metrics]
    assert len(metrics) == 2 and bundle.updates == 2
    assert all(math.isfinite(m["wm_total"]) for m in metrics)


def test_online_rounds_need_an_update_per_episode(config):
    bundle = AgentBundle(SOURCE, config)
    rounds = train_online(bundle, runner.make_env(config.source_env), ReplayBuffer(100),
                          np.random.default_rng(0), 0)
    with pytest.raises(ConfigError):
        next(rounds)


# Checkpoints --------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, config):
    bundle = AgentBundle(TARGET, config)
    bundle.updates = 7
    path = save_checkpoint(bundle, tmp_path / f"agent{CHECKPOINT_SUFFIX}")
    loaded, loaded_config = load_checkpoint(path)
    assert loaded.role == TARGET
    assert loaded.updates == 7
    assert loaded_config == config
    assert loaded.param_digest() == bundle.param_digest()


def test_checkpoint_with_foreign_arrays(tmp_path, config):
    path = save_checkpoint(AgentBundle(TARGET, config), tmp_path / "agent.cwck")
    bigger = replace(config, model=replace(config.model, deter_size=24))
    arrays, meta = read_container(path, CHECKPOINT_MAGIC)
    meta["config"] = bigger.to_dict()
    write_container(path, CHECKPOINT_MAGIC, arrays, meta)
    with pytest.raises(FormatError):
        load_checkpoint(path)


# Full pipeline ---------------------------------------------------------------------

def test_full_run_layout(tmp_path, config, dataset_dir):
    run_dir = coworld_train(config, dataset_dir, tmp_path / "run")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["outer_iterations_completed"] == 1
    assert not manifest["ended_early"]
    assert set(manifest["checkpoints"]) == {
        "source_pretrained", "target_iter000", "source_iter000", "target_final", "source_final",
    }
    assert manifest["final_eval"]["episodes"] == config.evaluation.episodes
    assert manifest["value_diagnostic"]["horizon"] == config.evaluation.value_horizon

    header, rows = read_csv(run_dir / "metrics.csv")
    assert tuple(header) == METRIC_COLUMNS
    stages = [row.split(",")[1] for row in rows]
    assert stages == ["target", "source", "eval", "final"]
    assert json.loads((run_dir / "config.json").read_text()) == config.to_dict()


def test_runs_are_reproducible(tmp_path, config, dataset_dir):
    first = coworld_train(config, dataset_dir, tmp_path / "a")
    second = coworld_train(config, dataset_dir, tmp_path / "b")
    assert (first / "metrics.csv").read_text() == (second / "metrics.csv").read_text()


def test_offline_baseline_has_no_source_agent(tmp_path, config, dataset_dir):
    config = apply_ablation(config, "offline_baseline")
    run_dir = coworld_train(config, dataset_dir, tmp_path / "run")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["ablation"] == "offline_baseline"
    assert manifest["domain_kl_scale"] == 0.0 and manifest["value_reg_scale"] == 0.0
    assert not any(name.startswith("source") for name in manifest["checkpoints"])


def test_target_env_is_never_stepped_without_evaluation(tmp_path, config, dataset_dir, monkeypatch):
    config = replace(config, evaluation=replace(config.evaluation, eval_every=0))
    stepped = []
    original = runner.RunnerEnv.step

    def recording_step(self, action):
        stepped.append(self.env_spec)
        return original(self, action)

    monkeypatch.setattr(runner.RunnerEnv, "step", recording_step)
    coworld_train(config, dataset_dir, tmp_path / "run")
    assert stepped
    assert all(spec == config.source_env for spec in stepped)


def test_zero_outer_iterations_only_pretrains(tmp_path, config, dataset_dir):
    config = replace(config, cotrain=replace(config.cotrain, outer_iterations=0))
    run_dir = coworld_train(config, dataset_dir, tmp_path / "run")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["outer_iterations_completed"] == 0
    assert list(manifest["checkpoints"]) == ["source_pretrained"]
    _, rows = read_csv(run_dir / "metrics.csv")
    assert rows == []


def test_refuses_non_empty_run_dir(tmp_path, config, dataset_dir):
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    (run_dir / "notes.txt").write_text("keep")
    with pytest.raises(OutputExistsError):
        coworld_train(config, dataset_dir, run_dir)
    assert (run_dir / "notes.txt").exists()


def test_force_replaces_run_dir(tmp_path, config, dataset_dir):
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    (run_dir / "notes.txt").write_text("stale")
    coworld_train(config, dataset_dir, run_dir, force=True)
    assert not (run_dir / "notes.txt").exists()


def test_missing_dataset(tmp_path, config):
    with pytest.raises(ConfigError):
        coworld_train(config, tmp_path / "nowhere", tmp_path / "run")


def test_dataset_without_long_enough_episodes(tmp_path):
    config = tiny_config()
    short = replace(config.target_env, episode_limit=3)
    dataset = write_dataset(tmp_path / "short", short, random_episodes(short, 2))
    with pytest.raises(EmptyDatasetError):
        coworld_train(config, dataset, tmp_path / "run")


def test_divergence_reports_last_checkpoint(tmp_path, config, dataset_dir, monkeypatch):
    def diverge(*args, **kwargs):
        raise NumericError("non-finite gradient norm", stage="source_world_model")

    monkeypatch.setattr(coworld, "train_source_iteration", diverge)
    with pytest.raises(NumericError) as excinfo:
        coworld_train(config, dataset_dir, tmp_path / "run")
    assert excinfo.value.last_checkpoint.endswith(f"target_iter000{CHECKPOINT_SUFFIX}")

    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["ended_early"]
    assert "non-finite" in manifest["error"]
