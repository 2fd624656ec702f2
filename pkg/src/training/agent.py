"""Agent bundles: one domain's world model, actor, critics and optimizers."""

import copy
import hashlib
import logging
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from torch import Tensor

from ..config.settings import CoWorldConfig, config_hash
from ..data.episode import Episode, EpisodeRecorder
from ..data.replay import ReplayBuffer, SequenceBatch
from ..envs.runner import EnvSpec, RunnerEnv, reset, step
from ..models.behavior import (
    EXPLORE,
    Actor,
    Critic,
    act,
    actor_loss,
    critic_loss,
    imagine_trajectories,
    rollout_returns,
    update_slow_critic,
)
from ..models.worldmodel import RSSMState, WorldModel, WorldModelOutput, wm_loss
from ..utils.container import CHECKPOINT_MAGIC, read_container, write_container
from ..utils.errors import ConfigError, FormatError, NumericError

logger = logging.getLogger(__name__)

SOURCE = "source"
TARGET = "target"
ROLES = (SOURCE, TARGET)

_MODULES = ("world_model", "actor", "critic", "slow_critic")


def _apply_gradients(optimizer: torch.optim.Optimizer, module: nn.Module, loss: Tensor,
                     clip: float, stage: str) -> float:
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    norm = torch.nn.utils.clip_grad_norm_(module.parameters(), clip)
    if not torch.isfinite(norm):
        raise NumericError(f"non-finite gradient norm in {stage}", stage=stage)
    optimizer.step()
    return norm.item()


class AgentBundle:
    """Parameters and optimizers of one agent.

    The source bundle additionally carries its environment handle and its
    online replay buffer; the target bundle never gets an environment.
    """

    def __init__(self, role: str, config: CoWorldConfig, env_spec: Optional[EnvSpec] = None,
                 dtype: torch.dtype = torch.float32):
        if role not in ROLES:
            raise ConfigError(f"unknown agent role '{role}'", fields=["role"])
        self._role = role
        self.config = config
        self.env_spec = env_spec or (config.source_env if role == SOURCE else config.target_env)

        self.world_model = WorldModel(config.model, self.env_spec).to(dtype)
        features = self.world_model.feature_size
        self.actor = Actor(features, self.env_spec.action_dim, config.behavior).to(dtype)
        self.critic = Critic(features, config.behavior.hidden_size).to(dtype)
        self.slow_critic = copy.deepcopy(self.critic)
        self.slow_critic.requires_grad_(False)

        m, b = config.model, config.behavior
        self.wm_optimizer = torch.optim.Adam(self.world_model.parameters(), lr=m.learning_rate, eps=m.adam_eps)
        self.actor_optimizer = torch.optim.Adam(self.actor.parameters(), lr=b.actor_lr, eps=m.adam_eps)
        self.critic_optimizer = torch.optim.Adam(self.critic.parameters(), lr=b.critic_lr, eps=m.adam_eps)

        self.env: Optional[RunnerEnv] = None
        self.buffer: Optional[ReplayBuffer] = None
        self.updates = 0

    @property
    def role(self) -> str:
        return self._role

    @property
    def dtype(self) -> torch.dtype:
        return self.world_model.dtype

    @property
    def device(self) -> torch.device:
        return self.world_model.device

    def modules(self) -> Dict[str, nn.Module]:
        return {name: getattr(self, name) for name in _MODULES}

    def encoder(self) -> Callable[[Tensor], Tensor]:
        """Normalized frames -> this agent's encoder logits."""
        return self.world_model.encode

    # Parameters ----------------------------------------------------------

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {}
        for name, module in self.modules().items():
            for key, tensor in module.state_dict().items():
                arrays[f"{name}.{key}"] = tensor.detach().cpu().numpy()
        return arrays

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, module in self.modules().items():
            prefix = f"{name}."
            state = {key[len(prefix):]: torch.as_tensor(value) for key, value in arrays.items()
                     if key.startswith(prefix)}
            try:
                module.load_state_dict(state)
            except RuntimeError as e:
                raise FormatError(f"checkpoint does not match the {name} network: {e}",
                                  field=f"arrays.{name}") from e

    def param_digest(self, *names: str) -> str:
        """SHA256 over the named modules' parameters (all modules by default)."""
        sha256 = hashlib.sha256()
        for name in names or _MODULES:
            for key, tensor in getattr(self, name).state_dict().items():
                sha256.update(f"{name}.{key}".encode())
                sha256.update(tensor.detach().cpu().contiguous().numpy().tobytes())
        return sha256.hexdigest()

    # Updates -------------------------------------------------------------

    def to_torch(self, batch: SequenceBatch) -> Dict[str, Tensor]:
        return batch.to_torch(device=str(self.device), dtype=self.dtype)

    def train_world_model(self, batch: Dict[str, Tensor],
                          source_encoder: Optional[Callable[[Tensor], Tensor]] = None,
                          domain_kl_scale: float = 0.0, extra_loss: Optional[Callable] = None,
                          generator: Optional[torch.Generator] = None) -> Tuple[WorldModelOutput, Dict[str, float]]:
        """One world-model update.

        Args:
            batch: Torch batch from :meth:`to_torch`
            source_encoder: Frozen encoder for the domain KL term
            domain_kl_scale: beta_2 (0 disables alignment)
            extra_loss: Optional callable returning (loss, metrics) added before the step
            generator: Torch generator for latent sampling

        Returns:
            (loss output, metrics)
        """
        m = self.config.model
        output = wm_loss(self.world_model, batch, source_encoder, m.kl_scale, domain_kl_scale,
                         m.kl_balance, m.free_nats, generator)
        loss = output.loss
        metrics = output.report.to_dict()
        metrics["wm_total"] = metrics.pop("total")
        if extra_loss is not None:
            extra, extra_metrics = extra_loss()
            loss = loss + extra
            metrics.update(extra_metrics)
        _apply_gradients(self.wm_optimizer, self.world_model, loss, m.grad_clip, f"{self.role}_world_model")
        return output, metrics

    def train_behavior(self, start_states: RSSMState, source_critic: Optional[Critic] = None,
                       value_reg_scale: float = 0.0, value_scale: float = 1.0,
                       generator: Optional[torch.Generator] = None) -> Dict[str, float]:
        """One actor and one critic update on imagined rollouts."""
        b = self.config.behavior
        rollout = imagine_trajectories(self.world_model, self.actor, start_states.detach(), b.horizon,
                                       b.gamma, self.slow_critic, generator)
        returns = rollout_returns(rollout, b.lambda_)

        loss, metrics = actor_loss(self.actor, rollout, returns, b.entropy_scale)
        _apply_gradients(self.actor_optimizer, self.actor, loss, b.grad_clip, f"{self.role}_actor")

        loss, report = critic_loss(self.critic, rollout, returns.detach(), source_critic,
                                   value_reg_scale, value_scale)
        _apply_gradients(self.critic_optimizer, self.critic, loss, b.grad_clip, f"{self.role}_critic")
        metrics.update(report.to_dict())
        metrics["critic_total"] = metrics.pop("total")

        self.updates += 1
        if self.updates % b.slow_target_update == 0:
            update_slow_critic(self.critic, self.slow_critic, b.slow_target_fraction)
        return metrics

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator,
               generator: Optional[torch.Generator] = None) -> Dict[str, float]:
        """Single-domain update: world model then behavior on one sampled batch."""
        t = self.config.training
        batch = self.to_torch(buffer.sample_sequences(t.batch_size, t.seq_len, rng))
        output, metrics = self.train_world_model(batch, generator=generator)
        metrics.update(self.train_behavior(output.posterior, generator=generator))
        return metrics


def collect_episode(bundle: Optional[AgentBundle], env: RunnerEnv, seed: int, mode: str = EXPLORE,
                    rng: Optional[np.random.Generator] = None,
                    generator: Optional[torch.Generator] = None,
                    policy: Optional[Callable[[RunnerEnv], np.ndarray]] = None) -> Episode:
    """Run one full episode and record it.

    Args:
        bundle: Agent acting through its world model (ignored when ``policy`` or ``rng`` drives)
        env: Environment to step
        seed: Reset seed, stored in the episode for replay
        mode: Acting mode for the agent
        rng: If given without ``bundle``, actions are uniform random
        generator: Torch generator for the agent's sampling
        policy: Scripted policy reading the env directly

    Returns:
        The recorded episode
    """
    observation = reset(env, seed=seed)
    recorder = EpisodeRecorder(observation, seed=seed)
    carry = None
    while True:
        if policy is not None:
            action = policy(env)
        elif bundle is None:
            action = rng.uniform(-1.0, 1.0, size=env.env_spec.action_dim).astype(np.float32)
        else:
            action, carry = act(bundle.actor, bundle.world_model, carry, observation, mode, generator)
        result = step(env, action)
        recorder.add(action, result.observation, result.reward, result.discount_flag)
        observation = result.observation
        if result.done:
            return recorder.finish()


def episode_seed(rng: np.random.Generator) -> int:
    """Fresh reset seed drawn from ``rng``."""
    return int(rng.integers(0, 2 ** 31 - 1))


def train_online(bundle: AgentBundle, env: RunnerEnv, buffer: ReplayBuffer, rng: np.random.Generator,
                 updates_per_episode: int, total_updates: Optional[int] = None,
                 generator: Optional[torch.Generator] = None,
                 update: Optional[Callable[[], Dict[str, float]]] = None,
                 ) -> Iterator[Tuple[Episode, List[Dict[str, float]]]]:
    """Alternate one explore-mode episode with ``updates_per_episode`` updates.

    Each collected episode is appended to ``buffer`` before the updates run.
    Yields ``(episode, per-update metrics)`` after every round. With
    ``total_updates`` the last round is shortened so exactly that many
    updates run; without it the caller decides when to stop iterating.

    Args:
        bundle: Agent that acts and learns
        env: Environment to collect in
        buffer: Online buffer the agent samples from
        rng: Source of reset seeds and batch sampling
        updates_per_episode: Updates after each collected episode
        total_updates: Stop after this many updates
        generator: Torch generator for acting and learning
        update: Replaces ``bundle.update`` for one update step
    """
    if updates_per_episode < 1:
        raise ConfigError(f"updates_per_episode must be >= 1, got {updates_per_episode}",
                          fields=["updates_per_episode"])
    update = update or (lambda: bundle.update(buffer, rng, generator))
    done = 0
    while total_updates is None or done < total_updates:
        episode = collect_episode(bundle, env, episode_seed(rng), EXPLORE, generator=generator)
        buffer.append_episode(episode)
        count = updates_per_episode if total_updates is None else min(updates_per_episode, total_updates - done)
        metrics = [update() for _ in range(count)]
        done += count
        yield episode, metrics


def save_checkpoint(bundle: AgentBundle, path: Path, config: Optional[CoWorldConfig] = None,
                    extra: Optional[Dict] = None) -> Path:
    """Write the bundle's parameters with its config in the header.

    Optimizer states are not stored; checkpoints serve evaluation and
    resumption of analysis, not of optimization.
    """
    config = config or bundle.config
    meta = {
        "role": bundle.role,
        "config": config.to_dict(),
        "config_hash": config_hash(config),
        "env_spec": bundle.env_spec.to_dict(),
        "updates": bundle.updates,
        "dtype": str(bundle.dtype).replace("torch.", ""),
    }
    meta.update(extra or {})
    write_container(path, CHECKPOINT_MAGIC, bundle.state_arrays(), meta)
    logger.debug("Saved %s checkpoint to %s", bundle.role, path)
    return Path(path)


def load_checkpoint(path: Path) -> Tuple[AgentBundle, CoWorldConfig]:
    """Rebuild a bundle from :func:`save_checkpoint` output."""
    arrays, meta = read_container(path, CHECKPOINT_MAGIC)
    try:
        config = CoWorldConfig.from_dict(meta["config"])
        env_spec = EnvSpec.from_dict(meta["env_spec"])
        role = meta["role"]
        dtype = getattr(torch, meta.get("dtype", "float32"))
    except (KeyError, TypeError, AttributeError, ConfigError) as e:
        raise FormatError(f"checkpoint header in {path} is incomplete: {e}", field="meta") from e

    bundle = AgentBundle(role, config, env_spec, dtype=dtype)
    bundle.load_arrays(arrays)
    bundle.updates = int(meta.get("updates", 0))
    return bundle, config
