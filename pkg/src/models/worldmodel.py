"""Recurrent state-space world model with grouped categorical latents.

Components: recurrent module g, encoder e, representation q, transition p,
and image / reward / discount heads over the feature h ⊕ flatten(z).
"""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch import Tensor

from ..config.settings import ModelConfig
from ..envs.runner import EnvSpec
from ..utils.errors import ConfigError, NumericError, ShapeError
from .distributions import balanced_kl, domain_kl, gaussian_nll, mode_one_hot, sample_one_hot
from .networks import ConvDecoder, ConvEncoder, mlp, preprocess

logger = logging.getLogger(__name__)


@dataclass
class RSSMState:
    """Deterministic h [..., D] plus one-hot z [..., G, K] and its logits."""

    h: Tensor
    z_sample: Tensor
    z_logits: Tensor

    def features(self) -> Tensor:
        return torch.cat([self.h, self.z_sample.flatten(-2)], dim=-1)

    def detach(self) -> "RSSMState":
        return RSSMState(self.h.detach(), self.z_sample.detach(), self.z_logits.detach())

    def flatten(self) -> "RSSMState":
        """Merge all leading dims into one batch dim."""
        return RSSMState(
            self.h.reshape(-1, self.h.shape[-1]),
            self.z_sample.reshape(-1, *self.z_sample.shape[-2:]),
            self.z_logits.reshape(-1, *self.z_logits.shape[-2:]),
        )

    def __getitem__(self, index) -> "RSSMState":
        return RSSMState(self.h[index], self.z_sample[index], self.z_logits[index])

    @staticmethod
    def stack(states: List["RSSMState"], dim: int = 0) -> "RSSMState":
        return RSSMState(
            torch.stack([s.h for s in states], dim),
            torch.stack([s.z_sample for s in states], dim),
            torch.stack([s.z_logits for s in states], dim),
        )


@dataclass
class WMLossReport:
    image_loss: float
    reward_loss: float
    discount_loss: float
    kl_loss: float
    domain_kl_loss: float
    total: float

    def to_dict(self, prefix: str = "") -> Dict[str, float]:
        return {f"{prefix}{key}": value for key, value in asdict(self).items()}


class WorldModelOutput(NamedTuple):
    loss: Tensor
    report: WMLossReport
    posterior: RSSMState  # [B, L, ...]
    embed_logits: Tensor  # [B, L, G, K]


def _check_finite(tensor: Tensor, what: str, step: Optional[int] = None) -> None:
    if not torch.isfinite(tensor).all():
        raise NumericError(f"non-finite {what}", stage="world_model", step=step)


class WorldModel(nn.Module):
    """World model for one domain; source and target agents each own one."""

    def __init__(self, config: ModelConfig, env_spec: EnvSpec):
        super().__init__()
        if env_spec.image_size % 8:
            raise ConfigError(f"image_size must be a multiple of 8, got {env_spec.image_size}",
                              fields=["image_size"])
        self.config = config
        self.image_size = env_spec.image_size
        self.channels = env_spec.channels
        self.action_dim = env_spec.action_dim
        self.groups = config.latent_groups
        self.classes = config.latent_classes
        self.deter_size = config.deter_size

        latent = self.groups * self.classes
        hidden = config.hidden_size
        self.feature_size = self.deter_size + latent

        self.encoder = ConvEncoder(self.image_size, self.channels, config.cnn_depth, latent)
        self.recurrent_in = nn.Sequential(nn.Linear(latent + self.action_dim, hidden), nn.ELU())
        self.recurrent = nn.GRUCell(hidden, self.deter_size)
        self.transition = mlp(self.deter_size, latent, hidden, layers=1)
        self.representation = mlp(self.deter_size + latent, latent, hidden, layers=1)
        self.decoder = ConvDecoder(self.feature_size, self.image_size, self.channels, config.cnn_depth)
        self.reward_head = mlp(self.feature_size, 1, hidden, layers=2)
        self.discount_head = mlp(self.feature_size, 1, hidden, layers=2)
        self.initial_h = nn.Parameter(torch.zeros(self.deter_size))

    @property
    def dtype(self) -> torch.dtype:
        return self.initial_h.dtype

    @property
    def device(self) -> torch.device:
        return self.initial_h.device

    def preprocess(self, observations: Tensor) -> Tensor:
        if observations.dtype == torch.uint8:
            return preprocess(observations, self.dtype)
        return observations.to(self.dtype)

    # Single steps --------------------------------------------------------

    def encode(self, observations: Tensor) -> Tensor:
        """Normalized frames [..., H, W, C] -> encoder logits [..., G, K]."""
        expected = (self.image_size, self.image_size, self.channels)
        if tuple(observations.shape[-3:]) != expected:
            raise ShapeError(f"observations must end in {expected}, got {tuple(observations.shape)}")
        logits = self.encoder(observations.to(self.dtype))
        return logits.reshape(*logits.shape[:-1], self.groups, self.classes)

    def initial_state(self, batch_size: int) -> RSSMState:
        h = torch.tanh(self.initial_h).expand(batch_size, self.deter_size)
        logits = self._transition_logits(h)
        return RSSMState(h, mode_one_hot(logits), logits)

    def _transition_logits(self, h: Tensor) -> Tensor:
        return self.transition(h).reshape(*h.shape[:-1], self.groups, self.classes)

    def _recurrent_step(self, prev: RSSMState, action: Tensor) -> Tensor:
        x = self.recurrent_in(torch.cat([prev.z_sample.flatten(-2), action], dim=-1))
        return self.recurrent(x, prev.h)

    def observe_step(self, prev: Optional[RSSMState], action: Tensor, embed_logits: Tensor,
                     is_first: Optional[Tensor] = None, generator: Optional[torch.Generator] = None,
                     step: Optional[int] = None, sample: bool = True) -> Tuple[RSSMState, Tensor]:
        """One posterior update.

        Args:
            prev: State after the previous frame (None starts fresh)
            action: Action that led to this frame [B, A]
            embed_logits: Encoder logits of this frame [B, G, K]
            is_first: Rows that start an episode [B]; they restart from the
                learned initial state with a zeroed action
            sample: Draw z from the posterior; False takes its mode

        Returns:
            (posterior state, prior logits)
        """
        batch = embed_logits.shape[0]
        init = self.initial_state(batch)
        if prev is None:
            prev = init
            action = torch.zeros_like(action)
        elif is_first is not None:
            first = is_first.to(torch.bool)
            prev = RSSMState(
                torch.where(first[:, None], init.h, prev.h),
                torch.where(first[:, None, None], init.z_sample, prev.z_sample),
                torch.where(first[:, None, None], init.z_logits, prev.z_logits),
            )
            action = torch.where(first[:, None], torch.zeros_like(action), action)

        h = self._recurrent_step(prev, action.to(self.dtype))
        _check_finite(h, "recurrent state", step)
        prior_logits = self._transition_logits(h)
        post_in = torch.cat([h, embed_logits.flatten(-2)], dim=-1)
        post_logits = self.representation(post_in).reshape(batch, self.groups, self.classes)
        _check_finite(post_logits, "posterior logits", step)
        z = sample_one_hot(post_logits, generator) if sample else mode_one_hot(post_logits)
        return RSSMState(h, z, post_logits), prior_logits

    def imagine_step(self, state: RSSMState, action: Tensor,
                     generator: Optional[torch.Generator] = None) -> RSSMState:
        """Prior-only step: z is drawn from the transition module."""
        h = self._recurrent_step(state, action.to(self.dtype))
        _check_finite(h, "imagined recurrent state")
        logits = self._transition_logits(h)
        return RSSMState(h, sample_one_hot(logits, generator), logits)

    def decode_obs(self, state: RSSMState) -> Tensor:
        """Per-pixel Gaussian mean in normalized space [..., H, W, C]."""
        return self.decoder(state.features())

    def predict_reward(self, state: RSSMState) -> Tensor:
        return self.reward_head(state.features()).squeeze(-1)

    def discount_logits(self, state: RSSMState) -> Tensor:
        return self.discount_head(state.features()).squeeze(-1)

    def predict_discount(self, state: RSSMState) -> Tensor:
        """Continuation probability in (0, 1)."""
        return torch.sigmoid(self.discount_logits(state))

    # Sequences -----------------------------------------------------------

    def observe(self, observations: Tensor, actions: Tensor, is_first: Tensor,
                generator: Optional[torch.Generator] = None,
                state: Optional[RSSMState] = None) -> Tuple[RSSMState, Tensor, Tensor]:
        """Run the posterior over [B, L] sequences.

        Returns:
            (posterior states [B, L, ...], prior logits [B, L, G, K], encoder logits [B, L, G, K])
        """
        embed = self.encode(self.preprocess(observations))
        posts, priors = [], []
        for t in range(observations.shape[1]):
            state, prior_logits = self.observe_step(state, actions[:, t], embed[:, t],
                                                    is_first[:, t], generator, step=t)
            posts.append(state)
            priors.append(prior_logits)
        return RSSMState.stack(posts, 1), torch.stack(priors, 1), embed


def wm_loss(world_model: WorldModel, batch: Dict[str, Tensor],
            source_encoder: Optional[Callable[[Tensor], Tensor]] = None,
            kl_scale: float = 1.0, domain_kl_scale: float = 0.0, kl_balance: float = 0.8,
            free_nats: float = 1.0, generator: Optional[torch.Generator] = None) -> WorldModelOutput:
    """World-model loss with the optional domain KL alignment term.

    Args:
        world_model: Model being trained
        batch: Tensors from :meth:`SequenceBatch.to_torch`
        source_encoder: Frozen source encoder (normalized frames -> logits);
            required when ``domain_kl_scale > 0``
        kl_scale: beta_1
        domain_kl_scale: beta_2
    """
    if domain_kl_scale > 0 and source_encoder is None:
        raise ConfigError("domain_kl_scale > 0 requires a source encoder", fields=["domain_kl_scale"])

    observations = batch["observations"]
    posterior, prior_logits, embed = world_model.observe(
        observations, batch["actions"], batch["is_first"], generator)

    target_images = world_model.preprocess(observations)
    image_loss = gaussian_nll(world_model.decode_obs(posterior), target_images, event_dims=3).mean()

    valid = (~batch["is_first"].to(torch.bool)).to(world_model.dtype)
    count = valid.sum().clamp(min=1.0)
    reward_nll = gaussian_nll(world_model.predict_reward(posterior), batch["rewards"].to(world_model.dtype))
    reward_loss = (reward_nll * valid).sum() / count
    discount_nll = F.binary_cross_entropy_with_logits(
        world_model.discount_logits(posterior), batch["discounts"].to(world_model.dtype), reduction="none")
    discount_loss = (discount_nll * valid).sum() / count

    kl_loss = balanced_kl(posterior.z_logits, prior_logits, kl_balance, free_nats)

    total = image_loss + reward_loss + discount_loss + kl_scale * kl_loss
    if domain_kl_scale > 0:
        with torch.no_grad():
            source_logits = source_encoder(target_images)
        domain_loss = domain_kl(source_logits, embed)
        total = total + domain_kl_scale * domain_loss
    elif source_encoder is not None:
        with torch.no_grad():
            domain_loss = domain_kl(source_encoder(target_images), embed)
    else:
        domain_loss = torch.zeros((), dtype=world_model.dtype)

    _check_finite(total, "world-model loss")
    report = WMLossReport(
        image_loss=image_loss.item(),
        reward_loss=reward_loss.item(),
        discount_loss=discount_loss.item(),
        kl_loss=max(kl_loss.item(), 0.0),
        domain_kl_loss=max(domain_loss.item(), 0.0),
        total=total.item(),
    )
    return WorldModelOutput(total, report, posterior, embed)
