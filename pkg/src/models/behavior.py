"""Actor-critic learning on latent imaginations.

The critic is trained on lambda-returns with an optional value-regularization
term that takes ``max(zeta * v_target, sg(v_source))`` per imagined state,
so the target critic is only pushed down where it exceeds the frozen
source critic.
"""

import contextlib
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor
from torch.distributions import Normal

from ..config.settings import BehaviorConfig
from ..utils.errors import ConfigError, NumericError
from .networks import mlp
from .worldmodel import RSSMState, WorldModel

logger = logging.getLogger(__name__)

ACTION_LIMIT = 1.0 - 1e-6
MEAN_SCALE = 5.0

EXPLORE = "explore"
EVAL = "eval"


@contextlib.contextmanager
def frozen(*modules: nn.Module) -> Iterator[None]:
    """Temporarily stop gradients from accumulating in ``modules``' parameters."""
    params = [p for m in modules if m is not None for p in m.parameters()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad_(flag)


class Actor(nn.Module):
    """Squashed-Gaussian policy over latent features."""

    def __init__(self, feature_size: int, action_dim: int, config: BehaviorConfig):
        super().__init__()
        self.action_dim = action_dim
        self.min_std = config.min_std
        self.raw_init_std = math.log(math.expm1(config.init_std))
        self.net = mlp(feature_size, 2 * action_dim, config.hidden_size, layers=2)

    def forward(self, features: Tensor) -> Tuple[Tensor, Tensor]:
        """Pre-squash mean and std, each [..., A]."""
        mean, raw_std = self.net(features).chunk(2, dim=-1)
        mean = MEAN_SCALE * torch.tanh(mean / MEAN_SCALE)
        std = F.softplus(raw_std + self.raw_init_std) + self.min_std
        return mean, std

    def sample(self, features: Tensor, generator: Optional[torch.Generator] = None) -> Tensor:
        """Reparameterized sample in (-1, 1)^A."""
        mean, std = self(features)
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
        return torch.tanh(mean + std * noise).clamp(-ACTION_LIMIT, ACTION_LIMIT)

    def mode(self, features: Tensor) -> Tensor:
        mean, _ = self(features)
        return torch.tanh(mean).clamp(-ACTION_LIMIT, ACTION_LIMIT)

    def entropy(self, features: Tensor) -> Tensor:
        """Entropy of the pre-squash Gaussian, summed over action dims."""
        mean, std = self(features)
        return Normal(mean, std).entropy().sum(-1)


class Critic(nn.Module):
    """Scalar state-value network over latent features."""

    def __init__(self, feature_size: int, hidden_size: int):
        super().__init__()
        self.net = mlp(feature_size, 1, hidden_size, layers=2)

    def forward(self, features: Tensor) -> Tensor:
        return self.net(features).squeeze(-1)


def update_slow_critic(critic: Critic, slow_critic: Critic, fraction: float = 1.0) -> None:
    """Move ``slow_critic`` toward ``critic`` (``fraction=1`` copies)."""
    with torch.no_grad():
        for slow, fast in zip(slow_critic.parameters(), critic.parameters()):
            slow.mul_(1.0 - fraction).add_(fraction * fast)


@dataclass
class ImaginedRollout:
    """Prior-only trajectories of N start states over H steps.

    ``rewards[:, t]`` and ``discounts[:, t]`` belong to arriving at state t;
    discounts already include gamma.
    """

    states: RSSMState  # [N, H+1, ...]
    actions: Tensor  # [N, H, A]
    rewards: Tensor  # [N, H+1]
    discounts: Tensor  # [N, H+1]
    values: Tensor  # [N, H+1]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    def features(self) -> Tensor:
        return self.states.features()

    def weights(self) -> Tensor:
        """Cumulative discount per state t < H, detached: [N, H]."""
        ones = torch.ones_like(self.discounts[:, :1])
        return torch.cumprod(torch.cat([ones, self.discounts[:, 1:-1]], dim=1), dim=1).detach()


def imagine_trajectories(world_model: WorldModel, actor: Actor, start_states: RSSMState,
                         horizon: int, gamma: float = 0.995, critic: Optional[Critic] = None,
                         generator: Optional[torch.Generator] = None) -> ImaginedRollout:
    """Roll the actor through the world model's prior for ``horizon`` steps.

    Args:
        world_model: Dynamics and reward/discount heads (parameters get no gradient)
        actor: Policy sampled at every imagined state
        start_states: Posterior states of a real batch, any leading shape
        horizon: Imagination length H
        gamma: Discount multiplied into the predicted continuation
        critic: Critic producing bootstrap values (zeros if None)
        generator: Torch generator for latent and action noise

    Returns:
        ImaginedRollout with gradients flowing from actions through the dynamics
    """
    if horizon < 1:
        raise ConfigError(f"imagination horizon must be >= 1, got {horizon}", fields=["behavior.horizon"])

    state = start_states.flatten().detach()
    states, actions = [state], []
    with frozen(world_model, critic):
        for _ in range(horizon):
            action = actor.sample(state.features().detach(), generator)
            state = world_model.imagine_step(state, action, generator)
            states.append(state)
            actions.append(action)

        trajectory = RSSMState.stack(states, 1)
        rewards = world_model.predict_reward(trajectory)
        discounts = gamma * world_model.predict_discount(trajectory)
        if critic is not None:
            values = critic(trajectory.features())
        else:
            values = torch.zeros_like(rewards)

    rollout = ImaginedRollout(trajectory, torch.stack(actions, 1), rewards, discounts, values)
    if not torch.isfinite(rollout.rewards).all() or not torch.isfinite(rollout.values).all():
        raise NumericError("non-finite imagined rewards or values", stage="imagination")
    return rollout


def lambda_returns(rewards, discounts, values, lambda_: float):
    """Backward lambda-return recursion along the last axis.

    ``V_t = r_t + d_t * ((1 - lambda) * v_{t+1} + lambda * V_{t+1})`` with
    ``V_H = v_H``.

    Args:
        rewards: [..., H]
        discounts: [..., H], already multiplied by gamma
        values: [..., H+1]
        lambda_: Mixing weight in [0, 1]

    Returns:
        Returns V of shape [..., H] (tensor or ndarray, matching the inputs)
    """
    if not 0.0 <= lambda_ <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lambda_}", fields=["behavior.lambda_"])
    horizon = rewards.shape[-1]
    if discounts.shape[-1] != horizon or values.shape[-1] != horizon + 1:
        raise ConfigError(
            f"misaligned lambda-return inputs: rewards {tuple(rewards.shape)}, "
            f"discounts {tuple(discounts.shape)}, values {tuple(values.shape)}",
            fields=["values"],
        )

    stack = torch.stack if isinstance(rewards, Tensor) else np.stack
    last = values[..., horizon]
    returns = []
    for t in reversed(range(horizon)):
        last = rewards[..., t] + discounts[..., t] * ((1.0 - lambda_) * values[..., t + 1] + lambda_ * last)
        returns.append(last)
    return stack(returns[::-1], -1)


def rollout_returns(rollout: ImaginedRollout, lambda_: float) -> Tensor:
    """Lambda-returns for the first H states of ``rollout``."""
    return lambda_returns(rollout.rewards[:, 1:], rollout.discounts[:, 1:], rollout.values, lambda_)


@dataclass
class CriticLossReport:
    td_loss: float
    regularizer: float
    total: float
    fraction_clamped: float

    def to_dict(self, prefix: str = "") -> Dict[str, float]:
        return {f"{prefix}{key}": value for key, value in asdict(self).items()}


def critic_loss(critic: Critic, rollout: ImaginedRollout, returns: Tensor,
                source_critic: Optional[Critic] = None, value_reg_scale: float = 0.0,
                value_scale: float = 1.0) -> Tuple[Tensor, CriticLossReport]:
    """Squared lambda-return regression plus the source-critic max term.

    Args:
        critic: Target-domain critic being trained
        rollout: Imagined rollout; its first H states are regressed
        returns: Lambda-returns [N, H] (treated as constants)
        source_critic: Frozen source-domain critic; required when
            ``value_reg_scale > 0``
        value_reg_scale: alpha
        value_scale: zeta

    Returns:
        (loss, report). At ``zeta * v == sg(v_source)`` the max takes the
        target-critic branch.
    """
    if value_reg_scale > 0 and source_critic is None:
        raise ConfigError("value_reg_scale > 0 requires a source critic", fields=["cotrain.value_reg_scale"])

    features = rollout.features()[:, :-1].detach()
    values = critic(features)
    td_loss = (0.5 * (values - returns.detach()) ** 2).mean()

    if source_critic is not None and value_reg_scale > 0:
        with torch.no_grad(), frozen(source_critic):
            source_values = source_critic(features)
        scaled = value_scale * values
        clamped = scaled >= source_values
        regularizer = torch.where(clamped, scaled, source_values).mean()
        fraction = clamped.to(values.dtype).mean().item()
    else:
        regularizer = torch.zeros((), dtype=values.dtype, device=values.device)
        fraction = 0.0

    total = td_loss + value_reg_scale * regularizer
    if not torch.isfinite(total):
        raise NumericError("non-finite critic loss", stage="critic")
    report = CriticLossReport(td_loss.item(), regularizer.item(), total.item(), fraction)
    return total, report


def actor_loss(actor: Actor, rollout: ImaginedRollout, returns: Tensor,
               entropy_scale: float = 1e-4) -> Tuple[Tensor, Dict[str, float]]:
    """Negative discount-weighted lambda-return plus entropy bonus.

    Gradients reach the actor through the returns (dynamics backprop) and
    through the entropy term.
    """
    entropy = actor.entropy(rollout.features()[:, :-1].detach())
    weights = rollout.weights()
    loss = -(weights * (returns + entropy_scale * entropy)).mean()
    if not torch.isfinite(loss):
        raise NumericError("non-finite actor loss", stage="actor")
    return loss, {
        "actor_loss": loss.item(),
        "actor_entropy": entropy.mean().item(),
        "imagined_return": returns.mean().item(),
    }


def act(actor: Actor, world_model: WorldModel, carry: Optional[Tuple[RSSMState, Tensor]],
        observation, mode: str = EVAL,
        generator: Optional[torch.Generator] = None) -> Tuple[np.ndarray, Tuple[RSSMState, Tensor]]:
    """Update the posterior with ``observation`` and pick an action.

    Args:
        actor: Policy
        world_model: Model providing the posterior update
        carry: (state, previous action) from the last call, or None at an episode start
        observation: uint8 frame(s) [H, W, C] or [B, H, W, C]
        mode: ``"explore"`` samples latents and actions, ``"eval"`` takes both modes
        generator: Torch generator for latent and action noise

    Returns:
        (actions as float32 ndarray matching the observation batch shape, new carry)
    """
    if mode not in (EXPLORE, EVAL):
        raise ConfigError(f"unknown act mode '{mode}'", fields=["mode"])

    obs = torch.as_tensor(np.asarray(observation), device=world_model.device)
    single = obs.dim() == 3
    if single:
        obs = obs.unsqueeze(0)

    explore = mode == EXPLORE
    with torch.no_grad():
        embed = world_model.encode(world_model.preprocess(obs))
        if carry is None:
            prev_action = torch.zeros(obs.shape[0], world_model.action_dim, dtype=world_model.dtype,
                                      device=world_model.device)
            state, _ = world_model.observe_step(None, prev_action, embed, generator=generator,
                                                sample=explore)
        else:
            prev_state, prev_action = carry
            state, _ = world_model.observe_step(prev_state, prev_action, embed, generator=generator,
                                                sample=explore)

        features = state.features()
        action = actor.sample(features, generator) if explore else actor.mode(features)

    result = action.cpu().numpy().astype(np.float32)
    return (result[0] if single else result), (state, action)
