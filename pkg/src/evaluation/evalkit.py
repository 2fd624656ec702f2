"""Policy returns, value-estimation diagnostics, latent alignment and open-loop prediction."""

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from ..data.episode import Episode
from ..envs.runner import EnvSpec, RunnerEnv, make_env, reset, step
from ..models.behavior import EVAL, act
from ..models.distributions import categorical_kl
from ..utils.errors import ConfigError
from ..utils.seeding import make_generator

if TYPE_CHECKING:
    from ..training.agent import AgentBundle

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    """Returns of N evaluation episodes (population std)."""

    mean_return: float
    std_return: float
    per_episode_returns: List[float]
    episodes: int
    seed: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ValueDiagnostic:
    """Discounted true return vs. summed critic estimate over one trajectory."""

    true_value: float
    estimated_value: float
    horizon: int
    gamma: float
    rescaled_true: float = 0.0
    rescaled_estimated: float = 0.0
    rewards: List[float] = field(default_factory=list, repr=False)

    @property
    def gap(self) -> float:
        return self.estimated_value - self.true_value

    def to_dict(self, with_rewards: bool = False) -> Dict:
        data = asdict(self)
        if not with_rewards:
            data.pop("rewards")
        data["gap"] = self.gap
        return data


@dataclass
class OpenLoopResult:
    """Open-loop video prediction against ground truth, pixels on the [0, 1] scale."""

    truth: np.ndarray  # uint8 [horizon, H, W, C]
    predicted: np.ndarray  # uint8 [horizon, H, W, C]
    mse: np.ndarray  # float64 [horizon]
    reconstruction_mse: np.ndarray  # float64 [context]

    @property
    def mean_mse(self) -> float:
        return float(self.mse.mean()) if len(self.mse) else 0.0


def evaluate_policy(env_spec: EnvSpec, bundle: Optional["AgentBundle"] = None, episodes: int = 10,
                    seed: int = 0, policy: Optional[Callable[[RunnerEnv], np.ndarray]] = None,
                    episode_seeds: Optional[Sequence[int]] = None,
                    progress_callback: Optional[Callable[[str, int, int], None]] = None) -> EvalReport:
    """Run ``episodes`` evaluation episodes in lockstep and sum their rewards.

    Args:
        env_spec: Environment to evaluate in (stepped for real)
        bundle: Agent acting in eval mode; ignored when ``policy`` is given
        episodes: Number of episodes
        seed: Base seed; episode i resets with ``seed + i`` unless ``episode_seeds`` is given
        policy: Scripted policy reading each env (e.g. the oracle)
        episode_seeds: Explicit reset seed per episode
        progress_callback: Called as ``(stage, done, total)`` per env step

    Returns:
        EvalReport over the episodes
    """
    if episodes < 1:
        raise ConfigError(f"episodes must be >= 1, got {episodes}", fields=["episodes"])
    if bundle is None and policy is None:
        raise ConfigError("evaluate_policy needs an agent or a scripted policy", fields=["bundle"])
    seeds = list(episode_seeds) if episode_seeds is not None else [seed + i for i in range(episodes)]
    if len(seeds) != episodes:
        raise ConfigError("episode_seeds must have one seed per episode", fields=["episode_seeds"])

    envs = [make_env(env_spec) for _ in seeds]
    observations = np.stack([reset(env, seed=s) for env, s in zip(envs, seeds)])
    returns = np.zeros(len(envs), dtype=np.float64)
    active = np.ones(len(envs), dtype=bool)
    generator = make_generator(seed)
    carry = None
    steps = 0

    while active.any():
        if policy is not None:
            actions = np.stack([policy(env) if alive else np.zeros(env_spec.action_dim, np.float32)
                                for env, alive in zip(envs, active)])
        else:
            actions, carry = act(bundle.actor, bundle.world_model, carry, observations, EVAL, generator)

        for i, env in enumerate(envs):
            if not active[i]:
                continue
            result = step(env, actions[i])
            returns[i] += result.reward
            observations[i] = result.observation
            if result.done:
                active[i] = False
        steps += 1
        if progress_callback:
            progress_callback("eval", steps, env_spec.episode_limit)

    report = EvalReport(
        mean_return=float(returns.mean()),
        std_return=float(returns.std(ddof=0)),
        per_episode_returns=[float(r) for r in returns],
        episodes=len(envs),
        seed=seed,
    )
    logger.info("Evaluation over %d episodes: %.3f ± %.3f", report.episodes, report.mean_return,
                report.std_return)
    return report


def discounted_sum(rewards: Sequence[float], gamma: float) -> float:
    rewards = np.asarray(rewards, dtype=np.float64)
    return float(np.sum(gamma ** np.arange(len(rewards)) * rewards))


def value_diagnostic(env_spec: EnvSpec, bundle: "AgentBundle", horizon: int = 500,
                     gamma: float = 0.995, seed: int = 0) -> ValueDiagnostic:
    """Roll the eval policy for ``horizon`` steps and compare value estimates.

    ``true_value`` is the discounted sum of the rewards actually received;
    ``estimated_value`` sums the critic's prediction at every visited
    posterior state. The env limit is raised to ``horizon`` when shorter.
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}", fields=["value_horizon"])

    env = make_env(replace(env_spec, episode_limit=max(env_spec.episode_limit, horizon)))
    observation = reset(env, seed=seed)
    generator = make_generator(seed)
    carry = None
    rewards, values = [], []

    for _ in range(horizon):
        action, carry = act(bundle.actor, bundle.world_model, carry, observation, EVAL, generator)
        with torch.no_grad():
            values.append(bundle.critic(carry[0].features()).item())
        result = step(env, action)
        rewards.append(result.reward)
        observation = result.observation
        if result.done:
            break

    diagnostic = ValueDiagnostic(
        true_value=discounted_sum(rewards, gamma),
        estimated_value=float(np.sum(values, dtype=np.float64)),
        horizon=len(rewards),
        gamma=gamma,
        rewards=[float(r) for r in rewards],
    )
    rescale_diagnostics([diagnostic])
    return diagnostic


def rescale_diagnostics(diagnostics: Sequence[ValueDiagnostic]) -> List[ValueDiagnostic]:
    """Max-normalize true and estimated values jointly across ``diagnostics`` (in place)."""
    scale = max((max(abs(d.true_value), abs(d.estimated_value)) for d in diagnostics), default=0.0)
    for d in diagnostics:
        d.rescaled_true = d.true_value / scale if scale > 0 else 0.0
        d.rescaled_estimated = d.estimated_value / scale if scale > 0 else 0.0
    return list(diagnostics)


def alignment_divergence(source_bundle: "AgentBundle", target_bundle: "AgentBundle",
                         observations) -> float:
    """Mean over frames and latent groups of KL[source encoder || target encoder].

    Args:
        source_bundle: Agent whose encoder is the reference distribution
        target_bundle: Agent whose encoder is compared against it
        observations: uint8 frames [..., H, W, C] shared by both domains
    """
    source_wm, target_wm = source_bundle.world_model, target_bundle.world_model
    frames = torch.as_tensor(np.asarray(observations), device=target_wm.device)
    with torch.no_grad():
        source_logits = source_wm.encode(source_wm.preprocess(frames))
        target_logits = target_wm.encode(target_wm.preprocess(frames))
        kl = categorical_kl(source_logits.to(torch.float64), target_logits.to(torch.float64))
    return max(float(kl.mean().item()) / target_wm.groups, 0.0)


def open_loop_prediction(bundle: "AgentBundle", episode: Episode, context: int = 5, horizon: int = 45,
                         seed: int = 0) -> OpenLoopResult:
    """Observe ``context`` frames, then predict ``horizon`` frames from the true actions alone.

    Raises:
        ConfigError: if the episode has fewer than ``context + horizon`` frames
    """
    if context < 1 or horizon < 0:
        raise ConfigError(f"need context >= 1 and horizon >= 0, got {context}, {horizon}",
                          fields=["open_loop_context", "open_loop_horizon"])
    if episode.num_frames < context + horizon:
        raise ConfigError(
            f"episode has {episode.num_frames} frames, open-loop needs {context + horizon}",
            fields=["open_loop_horizon"],
        )

    wm = bundle.world_model
    generator = make_generator(seed)
    frames = torch.as_tensor(episode.observations[:context + horizon], device=wm.device)
    actions = torch.as_tensor(episode.actions, dtype=wm.dtype, device=wm.device)
    zero = torch.zeros(1, wm.action_dim, dtype=wm.dtype, device=wm.device)

    with torch.no_grad():
        embed = wm.encode(wm.preprocess(frames[:context]))
        state, reconstructions = None, []
        for i in range(context):
            action = zero if i == 0 else actions[i - 1:i]
            state, _ = wm.observe_step(state, action, embed[i:i + 1], generator=generator)
            reconstructions.append(wm.decode_obs(state))

        predictions = []
        for i in range(context, context + horizon):
            state = wm.imagine_step(state, actions[i - 1:i], generator)
            predictions.append(wm.decode_obs(state))

    def to_unit(images: List[torch.Tensor]) -> np.ndarray:
        if not images:
            return np.zeros((0, wm.image_size, wm.image_size, wm.channels), dtype=np.float64)
        return (torch.cat(images).to(torch.float64) + 0.5).clamp(0.0, 1.0).cpu().numpy()

    truth = episode.observations[:context + horizon].astype(np.float64) / 255.0
    recon = to_unit(reconstructions)
    predicted = to_unit(predictions)
    axes = (1, 2, 3)
    return OpenLoopResult(
        truth=episode.observations[context:context + horizon].copy(),
        predicted=np.round(predicted * 255.0).astype(np.uint8),
        mse=((predicted - truth[context:]) ** 2).mean(axis=axes) if horizon else np.zeros(0),
        reconstruction_mse=((recon - truth[:context]) ** 2).mean(axis=axes),
    )
