"""Medium-replay offline dataset generation.

A single-domain agent is trained online in the environment and every
episode it collects is kept, from the random prefill onward, until a
10-episode evaluation first reaches a third of the scripted oracle's mean
return or the step budget runs out.
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np

from ..config.settings import CoWorldConfig, config_hash
from ..envs.runner import EnvSpec, make_env, oracle_action
from ..evaluation.evalkit import evaluate_policy
from ..training.agent import TARGET, AgentBundle, collect_episode, episode_seed, train_online
from ..utils.errors import ConfigError
from ..utils.fs import prepare_output_dir, write_json
from ..utils.hashing import dict_hash, file_hash
from ..utils.seeding import seed_everything
from .episode import Episode, save_episode
from .replay import ReplayBuffer

logger = logging.getLogger(__name__)

THRESHOLD_FRACTION = 1.0 / 3.0
EPISODE_SUFFIX = ".cwep"


def estimate_max_score(env_spec: EnvSpec, episodes: int = 10, seed: int = 0) -> float:
    """Mean return of the scripted straight-to-goal policy."""
    report = evaluate_policy(env_spec, policy=oracle_action, episodes=episodes, seed=seed)
    return report.mean_return


class _DatasetWriter:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.entries = []
        self.steps = 0

    def add(self, episode: Episode) -> None:
        name = f"episode_{len(self.entries):05d}{EPISODE_SUFFIX}"
        path = self.out_dir / name
        save_episode(episode, path)
        self.entries.append({
            "file": name,
            "length": len(episode),
            "seed": episode.seed,
            "return": episode.total_reward,
            "sha256": file_hash(path),
        })
        self.steps += len(episode)


def generate_medium_replay(env_spec: EnvSpec, out_dir: Path, budget_steps: int, seed: int = 0,
                           config: Optional[CoWorldConfig] = None, force: bool = False,
                           progress_callback: Optional[Callable[[str, int, int], None]] = None) -> Dict[str, Any]:
    """Train online in ``env_spec`` and persist the whole replay prefix.

    Args:
        env_spec: Environment the dataset is recorded in (the target domain)
        out_dir: Dataset directory (episode files + manifest.json)
        budget_steps: Maximum number of environment steps to record
        seed: Seed for the agent, sampling and episode resets
        config: Agent and schedule settings (defaults if None)
        force: Overwrite a non-empty ``out_dir``
        progress_callback: Called as ``(stage, collected_steps, budget_steps)``

    Returns:
        The manifest written to ``out_dir/manifest.json``
    """
    config = config or CoWorldConfig()
    config = replace(config, seed=seed, target_env=env_spec).ensure_valid()
    d, t = config.dataset, config.training
    if budget_steps < 0:
        raise ConfigError(f"budget_steps must be >= 0, got {budget_steps}", fields=["budget"])

    out_dir = prepare_output_dir(out_dir, force)
    generator = seed_everything(seed)
    rng = np.random.default_rng(seed)

    max_score = estimate_max_score(env_spec, d.oracle_episodes, seed=seed + 20_000)
    threshold = max_score * THRESHOLD_FRACTION
    logger.info("Oracle max score %.3f, threshold %.3f", max_score, threshold)

    writer = _DatasetWriter(out_dir)
    evaluations = []
    achieved = None
    reached = False

    if budget_steps >= env_spec.episode_limit:
        agent = AgentBundle(TARGET, config, env_spec)
        env = make_env(env_spec)
        buffer = ReplayBuffer(max(t.buffer_capacity, budget_steps))

        def fits() -> bool:
            return writer.steps + env_spec.episode_limit <= budget_steps

        def record(episode: Episode) -> None:
            writer.add(episode)
            if progress_callback:
                progress_callback("collect", writer.steps, budget_steps)

        for _ in range(t.prefill_episodes):
            if not fits():
                break
            episode = collect_episode(None, env, episode_seed(rng), rng=rng)
            buffer.append_episode(episode)
            record(episode)

        if fits():
            rounds = train_online(agent, env, buffer, rng, d.updates_per_episode, generator=generator)
            for collected, (episode, _) in enumerate(rounds, start=1):
                record(episode)
                if collected % d.eval_every_episodes == 0:
                    report = evaluate_policy(env_spec, agent, d.eval_episodes, seed=seed + 30_000 + collected)
                    evaluations.append({"steps": writer.steps, "mean_return": report.mean_return,
                                        "std_return": report.std_return})
                    achieved = report.mean_return
                    if report.mean_return >= threshold:
                        reached = True
                        logger.info("Threshold reached after %d steps (%.3f >= %.3f)",
                                    writer.steps, report.mean_return, threshold)
                        break
                if not fits():
                    break

    manifest = {
        "schema": 1,
        "kind": "medium_replay",
        "env_spec": env_spec.to_dict(),
        "seed": seed,
        "budget_steps": budget_steps,
        "collected_steps": writer.steps,
        "num_episodes": len(writer.entries),
        "max_score": max_score,
        "max_score_method": "scripted_oracle",
        "threshold": threshold,
        "achieved_score": achieved,
        "threshold_reached": reached,
        "budget_capped": not reached,
        "evaluations": evaluations,
        "config_hash": config_hash(config),
        "episodes": writer.entries,
    }
    write_json(out_dir / "manifest.json", manifest)
    logger.info("Wrote %d episodes (%d steps) to %s%s", len(writer.entries), writer.steps, out_dir,
                "" if reached else " [budget-capped]")
    return manifest


def manifest_hash(manifest: Dict[str, Any]) -> str:
    return dict_hash(manifest)
