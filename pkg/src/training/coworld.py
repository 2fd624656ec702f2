"""Co-training of a source agent (online, simulator) and a target agent (offline dataset).

Outer loop per iteration:

1. target stage: world model with domain KL to the frozen source encoder,
   then actor-critic with the source critic as value regularizer;
2. source stage: world model whose reward head is also fit on target
   states against target-modulated rewards, source actor-critic, and
   fresh source-env episodes.
"""

import csv
import logging
from collections import defaultdict
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import torch
from torch import Tensor

from ..config.settings import CoWorldConfig, config_hash, default_output_root
from ..data.replay import ReplayBuffer
from ..envs.runner import make_env
from ..evaluation.evalkit import alignment_divergence, evaluate_policy, value_diagnostic
from ..models.distributions import gaussian_nll
from ..models.worldmodel import RSSMState, WorldModel
from ..utils.errors import ConfigError, EmptyDatasetError, NumericError
from ..utils.fs import prepare_output_dir, read_json, write_json
from ..utils.hashing import dict_hash
from ..utils.seeding import make_generator, seed_everything
from .agent import (
    SOURCE,
    TARGET,
    AgentBundle,
    collect_episode,
    episode_seed,
    save_checkpoint,
    train_online,
)

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str, int, int], None]

METRIC_COLUMNS = (
    "iteration", "stage", "step",
    "image_loss", "reward_loss", "discount_loss", "kl_loss", "domain_kl_loss", "wm_total",
    "target_reward_nll",
    "td_loss", "regularizer", "critic_total", "fraction_clamped",
    "actor_loss", "actor_entropy", "imagined_return",
    "source_reward_mle_before", "source_reward_mle_after", "source_buffer_steps",
    "eval_mean_return", "eval_std_return", "alignment_divergence",
    "value_true", "value_estimated", "value_gap",
)

CHECKPOINT_SUFFIX = ".cwck"


class MetricsWriter:
    """Append-only metrics.csv with a fixed column set."""

    def __init__(self, path: Path):
        self.path = Path(path)
        with open(self.path, 'w', newline="") as f:
            csv.writer(f).writerow(METRIC_COLUMNS)

    def write(self, iteration: int, stage: str, step: int, metrics: Dict[str, float]) -> None:
        row = {"iteration": iteration, "stage": stage, "step": step}
        row.update({key: repr(float(value)) for key, value in metrics.items() if key in METRIC_COLUMNS})
        with open(self.path, 'a', newline="") as f:
            csv.DictWriter(f, fieldnames=METRIC_COLUMNS, restval="").writerow(row)


class _Averager:
    def __init__(self):
        self._values = defaultdict(list)

    def add(self, metrics: Dict[str, float]) -> None:
        for key, value in metrics.items():
            self._values[key].append(value)

    def mean(self) -> Dict[str, float]:
        return {key: float(np.mean(values)) for key, values in self._values.items()}


# Reward relabeling --------------------------------------------------------

def relabel_rewards(predicted, true_rewards, k: float):
    """Target-modulated reward ``k * predicted + (1 - k) * true``."""
    if not 0.0 <= k <= 1.0:
        raise ConfigError(f"reward balance k must be in [0, 1], got {k}", fields=["cotrain.reward_balance"])
    return k * predicted + (1.0 - k) * true_rewards


def relabel_source_rewards(batch: Dict[str, Tensor], origin: str, source_wm: WorldModel, k: float,
                           generator: Optional[torch.Generator] = None) -> Tensor:
    """Rewards used to train the source reward head on ``batch``.

    Source-origin batches keep their rewards. Target-origin batches are
    encoded with the source model's recurrent and representation modules and
    their rewards blended with the source reward prediction.
    """
    if not 0.0 <= k <= 1.0:
        raise ConfigError(f"reward balance k must be in [0, 1], got {k}", fields=["cotrain.reward_balance"])
    if origin == SOURCE:
        return batch["rewards"]
    if origin != TARGET:
        raise ConfigError(f"unknown batch origin '{origin}'", fields=["origin"])

    with torch.no_grad():
        posterior, _, _ = source_wm.observe(batch["observations"], batch["actions"], batch["is_first"], generator)
        predicted = source_wm.predict_reward(posterior)
    return relabel_rewards(predicted, batch["rewards"].to(predicted.dtype), k)


def reward_nll(world_model: WorldModel, posterior: RSSMState, rewards: Tensor, is_first: Tensor) -> Tensor:
    """Mean unit-variance Gaussian reward NLL over non-first elements."""
    valid = (~is_first.to(torch.bool)).to(world_model.dtype)
    nll = gaussian_nll(world_model.predict_reward(posterior), rewards.to(world_model.dtype))
    return (nll * valid).sum() / valid.sum().clamp(min=1.0)


def reward_mle_loss(source_wm: WorldModel, source_batch: Dict[str, Tensor],
                    target_batch: Optional[Dict[str, Tensor]] = None,
                    target_rewards: Optional[Tensor] = None,
                    generator: Optional[torch.Generator] = None) -> Tuple[Tensor, Dict[str, float]]:
    """Reward-head likelihood over source states plus target states.

    Args:
        source_wm: Source world model (both batches are encoded with it)
        source_batch: Source-domain batch, fit against its own rewards
        target_batch: Target-domain batch, or None / zero rows for source-only
        target_rewards: Relabeled rewards for ``target_batch``

    Returns:
        (loss, {"source_reward_nll", "target_reward_nll"})
    """
    posterior, _, _ = source_wm.observe(source_batch["observations"], source_batch["actions"],
                                        source_batch["is_first"], generator)
    loss = reward_nll(source_wm, posterior, source_batch["rewards"], source_batch["is_first"])
    metrics = {"source_reward_nll": loss.item(), "target_reward_nll": 0.0}

    if target_batch is not None and target_batch["observations"].shape[0] > 0:
        if target_rewards is None:
            raise ConfigError("target_rewards are required with a target batch", fields=["target_rewards"])
        target_posterior, _, _ = source_wm.observe(target_batch["observations"], target_batch["actions"],
                                                   target_batch["is_first"], generator)
        target_loss = reward_nll(source_wm, target_posterior, target_rewards, target_batch["is_first"])
        metrics["target_reward_nll"] = target_loss.item()
        loss = loss + target_loss
    return loss, metrics


# Stages ------------------------------------------------------------------

def setup_source(config: CoWorldConfig, source: AgentBundle, rng: np.random.Generator) -> AgentBundle:
    """Give the source agent its env and online buffer, prefilled with random episodes."""
    if source.env is None:
        source.env = make_env(config.source_env)
    if source.buffer is None:
        source.buffer = ReplayBuffer(config.training.buffer_capacity)
    for _ in range(config.training.prefill_episodes):
        source.buffer.append_episode(collect_episode(None, source.env, episode_seed(rng), rng=rng))
    return source


def pretrain_source(config: CoWorldConfig, source: AgentBundle, rng: np.random.Generator,
                    generator: Optional[torch.Generator] = None,
                    progress_callback: Optional[ProgressCallback] = None) -> AgentBundle:
    """Online single-domain training of the source agent; no target data involved."""
    steps = config.cotrain.pretrain_steps
    if steps == 0:
        logger.info("Source pretraining skipped (pretrain_steps = 0)")
        return source
    if source.env is None or source.buffer is None:
        setup_source(config, source, rng)

    logger.info("Pretraining source agent for %d updates", steps)
    averager = _Averager()
    done = 0
    rounds = train_online(source, source.env, source.buffer, rng, config.cotrain.collect_every, steps, generator)
    for _, round_metrics in rounds:
        for metrics in round_metrics:
            averager.add(metrics)
            logger.debug("pretrain %d: %s", done, metrics)
            done += 1
        if progress_callback:
            progress_callback("pretrain", done, steps)

    summary = averager.mean()
    logger.info("Source pretraining done: wm_total=%.3f, buffer=%d steps",
                summary.get("wm_total", float("nan")), source.buffer.num_steps)
    return source


def train_target_iteration(config: CoWorldConfig, target: AgentBundle, source: Optional[AgentBundle],
                           offline_buffer: ReplayBuffer, rng: np.random.Generator,
                           generator: Optional[torch.Generator] = None,
                           progress_callback: Optional[ProgressCallback] = None) -> Dict[str, float]:
    """K1 offline updates of the target agent; source parameters are only read.

    Returns:
        Metrics averaged over the iteration
    """
    c, t = config.cotrain, config.training
    if source is None and (c.domain_kl_scale > 0 or c.value_reg_scale > 0):
        raise ConfigError("alignment or value regularization needs a source agent",
                          fields=["cotrain.domain_kl_scale", "cotrain.value_reg_scale"])
    source_encoder = source.encoder() if source is not None else None
    source_critic = source.critic if source is not None and c.value_reg_scale > 0 else None

    averager = _Averager()
    for k in range(c.target_steps):
        batch = target.to_torch(offline_buffer.sample_sequences(t.batch_size, t.seq_len, rng))
        output, metrics = target.train_world_model(batch, source_encoder, c.domain_kl_scale,
                                                   generator=generator)
        metrics.update(target.train_behavior(output.posterior, source_critic, c.value_reg_scale,
                                             c.value_scale, generator))
        averager.add(metrics)
        logger.debug("target %d: %s", k, metrics)
        if progress_callback:
            progress_callback("target", k + 1, c.target_steps)
    return averager.mean()


def train_source_iteration(config: CoWorldConfig, source: AgentBundle, offline_buffer: ReplayBuffer,
                           rng: np.random.Generator, generator: Optional[torch.Generator] = None,
                           progress_callback: Optional[ProgressCallback] = None) -> Dict[str, float]:
    """K2 source updates with target-modulated reward learning and online collection.

    Returns:
        Metrics averaged over the iteration, plus the held-out reward
        likelihood loss before and after it
    """
    c, t = config.cotrain, config.training
    if source.env is None or source.buffer is None:
        setup_source(config, source, rng)
    wm = source.world_model

    held_out_rng = np.random.default_rng(episode_seed(rng))
    held_out_seed = episode_seed(rng)

    def held_out_loss(pair) -> float:
        source_batch, target_batch, target_rewards = pair
        with torch.no_grad():
            loss, _ = reward_mle_loss(wm, source_batch, target_batch, target_rewards,
                                      make_generator(held_out_seed))
        return loss.item()

    held_out = None
    if any(e.num_frames >= t.seq_len for e in source.buffer.episodes()):
        held_source = source.to_torch(source.buffer.sample_sequences(t.batch_size, t.seq_len, held_out_rng))
        held_target = source.to_torch(offline_buffer.sample_sequences(t.batch_size, t.seq_len, held_out_rng))
        held_rewards = relabel_source_rewards(held_target, TARGET, wm, c.reward_balance,
                                              make_generator(held_out_seed))
        held_out = (held_source, held_target, held_rewards)
    before = held_out_loss(held_out) if held_out else None

    def source_update() -> Dict[str, float]:
        source_batch = source.to_torch(source.buffer.sample_sequences(t.batch_size, t.seq_len, rng))
        target_batch = source.to_torch(offline_buffer.sample_sequences(t.batch_size, t.seq_len, rng))
        relabeled = relabel_source_rewards(target_batch, TARGET, wm, c.reward_balance, generator)

        def target_reward_loss():
            posterior, _, _ = wm.observe(target_batch["observations"], target_batch["actions"],
                                         target_batch["is_first"], generator)
            loss = reward_nll(wm, posterior, relabeled, target_batch["is_first"])
            return loss, {"target_reward_nll": loss.item()}

        output, metrics = source.train_world_model(source_batch, extra_loss=target_reward_loss,
                                                   generator=generator)
        metrics.update(source.train_behavior(output.posterior, generator=generator))
        return metrics

    averager = _Averager()
    done = 0
    rounds = train_online(source, source.env, source.buffer, rng, c.collect_every, c.source_steps, generator,
                          update=source_update)
    for _, round_metrics in rounds:
        for metrics in round_metrics:
            averager.add(metrics)
            logger.debug("source %d: %s", done, metrics)
            done += 1
        if progress_callback:
            progress_callback("source", done, c.source_steps)

    summary = averager.mean()
    summary["source_buffer_steps"] = float(source.buffer.num_steps)
    if held_out:
        summary["source_reward_mle_before"] = before
        summary["source_reward_mle_after"] = held_out_loss(held_out)
    return summary


# Full pipeline -----------------------------------------------------------

def _load_offline(config: CoWorldConfig, dataset_dir: Path) -> Tuple[ReplayBuffer, Dict]:
    if not dataset_dir.is_dir():
        raise ConfigError(f"dataset directory {dataset_dir} does not exist", fields=["paths.dataset_dir"])
    manifest = read_json(dataset_dir / "manifest.json", field="manifest")
    offline = ReplayBuffer.load_directory(dataset_dir)
    if not any(e.num_frames >= config.training.seq_len for e in offline.episodes()):
        raise EmptyDatasetError(
            f"dataset {dataset_dir} has no episode with {config.training.seq_len} frames "
            f"({len(offline)} episodes, {offline.num_steps} steps)"
        )

    dataset_env = manifest.get("env_spec", {})
    for key in ("image_size", "channels", "action_dim"):
        if key in dataset_env and dataset_env[key] != getattr(config.target_env, key):
            raise ConfigError(
                f"dataset {key}={dataset_env[key]} does not match target_env.{key}="
                f"{getattr(config.target_env, key)}",
                fields=[f"target_env.{key}"],
            )
    return offline, manifest


def coworld_train(config: CoWorldConfig, dataset_dir: Optional[Path] = None, run_dir: Optional[Path] = None,
                  force: bool = False, progress_callback: Optional[ProgressCallback] = None) -> Path:
    """Run the whole pipeline and return the run directory.

    The run directory receives ``config.json``, ``metrics.csv``,
    ``checkpoints/`` and ``manifest.json``. The target environment is only
    stepped by the periodic evaluation (``evaluation.eval_every``; 0 disables it).
    """
    config.ensure_valid()
    dataset_dir = dataset_dir or config.paths.dataset_dir
    if not dataset_dir:
        raise ConfigError("no dataset directory given", fields=["paths.dataset_dir"])
    dataset_dir = Path(dataset_dir).expanduser()
    offline, dataset_manifest = _load_offline(config, dataset_dir)

    run_dir = Path(run_dir or config.paths.run_dir
                   or default_output_root() / f"{config.ablation}-seed{config.seed}")
    prepare_output_dir(run_dir, force)
    checkpoints = run_dir / "checkpoints"
    checkpoints.mkdir()
    write_json(run_dir / "config.json", config.to_dict())
    writer = MetricsWriter(run_dir / "metrics.csv")
    logger.info("Run directory: %s (ablation=%s)", run_dir, config.ablation)

    generator = seed_everything(config.seed)
    rng = np.random.default_rng(config.seed)
    e = config.evaluation
    eval_seed = config.seed + 10_000
    alignment_frames = offline.sample_sequences(
        config.training.batch_size, config.training.seq_len, np.random.default_rng(eval_seed)
    ).observations

    target = AgentBundle(TARGET, config)
    source = None
    saved: Dict[str, str] = {}

    def checkpoint(bundle: AgentBundle, name: str) -> Path:
        path = save_checkpoint(bundle, checkpoints / f"{name}{CHECKPOINT_SUFFIX}", config)
        saved[name] = str(path.relative_to(run_dir))
        return path

    step = 0
    completed = 0
    last_good: Optional[Path] = None
    final_eval, diagnostic, error = None, None, None
    try:
        if config.uses_source_agent:
            source = AgentBundle(SOURCE, config)
            setup_source(config, source, rng)
            pretrain_source(config, source, rng, generator, progress_callback)
            last_good = checkpoint(source, "source_pretrained")

        for iteration in range(config.cotrain.outer_iterations):
            logger.info("Outer iteration %d/%d", iteration + 1, config.cotrain.outer_iterations)
            metrics = train_target_iteration(config, target, source, offline, rng, generator, progress_callback)
            step += config.cotrain.target_steps
            writer.write(iteration, "target", step, metrics)
            last_good = checkpoint(target, f"target_iter{iteration:03d}")

            if source is not None:
                metrics = train_source_iteration(config, source, offline, rng, generator, progress_callback)
                writer.write(iteration, "source", step, metrics)
                checkpoint(source, f"source_iter{iteration:03d}")

            if e.eval_every and (iteration + 1) % e.eval_every == 0:
                report = evaluate_policy(config.target_env, target, e.episodes, eval_seed)
                row = {"eval_mean_return": report.mean_return, "eval_std_return": report.std_return}
                if source is not None:
                    row["alignment_divergence"] = alignment_divergence(source, target, alignment_frames)
                writer.write(iteration, "eval", step, row)
                final_eval = report.to_dict()
            completed = iteration + 1

        if config.cotrain.outer_iterations > 0:
            checkpoint(target, "target_final")
            if source is not None:
                checkpoint(source, "source_final")
            if e.eval_every:
                diagnostic = value_diagnostic(config.target_env, target, e.value_horizon,
                                              config.behavior.gamma, eval_seed)
                writer.write(completed - 1, "final", step, {
                    "value_true": diagnostic.true_value,
                    "value_estimated": diagnostic.estimated_value,
                    "value_gap": diagnostic.gap,
                })
    except NumericError as exc:
        error = str(exc)
        raise NumericError(f"co-training diverged: {exc}", stage=exc.stage or "cotrain", step=step,
                           last_checkpoint=str(last_good) if last_good else None) from exc
    finally:
        write_json(run_dir / "manifest.json", {
            "schema": config.schema,
            "ablation": config.ablation,
            "seed": config.seed,
            "domain_kl_scale": config.cotrain.domain_kl_scale,
            "value_reg_scale": config.cotrain.value_reg_scale,
            "config_hash": config_hash(config),
            "dataset_dir": str(dataset_dir),
            "dataset_manifest_hash": dict_hash(dataset_manifest),
            "outer_iterations_completed": completed,
            "updates": step,
            "ended_early": completed < config.cotrain.outer_iterations,
            "error": error,
            "checkpoints": saved,
            "final_eval": final_eval,
            "value_diagnostic": diagnostic.to_dict() if diagnostic else None,
            "metrics_columns": list(METRIC_COLUMNS),
        })

    logger.info("Co-training finished: %d iterations, %d target updates", completed, step)
    return run_dir
