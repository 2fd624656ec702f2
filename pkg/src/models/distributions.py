"""Grouped categorical latents: sampling, straight-through gradients and KL terms."""

import math
from typing import Optional

import torch
import torch.nn.functional as F
from torch import Tensor
from torch.distributions import Independent, Normal, OneHotCategorical, kl_divergence

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def grouped_categorical(logits: Tensor) -> Independent:
    """G independent K-way categoricals from logits [..., G, K]."""
    return Independent(OneHotCategorical(logits=logits), 1)


def sample_one_hot(logits: Tensor, generator: Optional[torch.Generator] = None) -> Tensor:
    """Draw one-hot samples [..., G, K] with a straight-through gradient.

    The forward value is the one-hot sample; the backward pass treats the
    sample as the softmax probabilities.
    """
    probs = F.softmax(logits, dim=-1)
    flat = probs.detach().reshape(-1, probs.shape[-1])
    index = torch.multinomial(flat, 1, generator=generator).squeeze(-1)
    one_hot = F.one_hot(index, probs.shape[-1]).reshape(probs.shape).to(probs.dtype)
    return one_hot + probs - probs.detach()


def mode_one_hot(logits: Tensor) -> Tensor:
    """Most likely class per group, straight-through like :func:`sample_one_hot`."""
    probs = F.softmax(logits, dim=-1)
    one_hot = F.one_hot(probs.argmax(-1), probs.shape[-1]).to(probs.dtype)
    return one_hot + probs - probs.detach()


def categorical_kl(p_logits: Tensor, q_logits: Tensor) -> Tensor:
    """KL[p || q] summed over groups, shape [...]."""
    return kl_divergence(grouped_categorical(p_logits), grouped_categorical(q_logits))


def balanced_kl(post_logits: Tensor, prior_logits: Tensor, balance: float = 0.8,
                free_nats: float = 1.0) -> Tensor:
    """KL[post || prior] with KL balancing and a free-nats floor.

    ``balance`` weights the term that trains the prior; the remainder
    trains the posterior. The floor applies to the batch mean.
    """
    prior_term = categorical_kl(post_logits.detach(), prior_logits).mean()
    post_term = categorical_kl(post_logits, prior_logits.detach()).mean()
    prior_term = torch.clamp(prior_term, min=free_nats)
    post_term = torch.clamp(post_term, min=free_nats)
    return balance * prior_term + (1.0 - balance) * post_term


def domain_kl(source_logits: Tensor, target_logits: Tensor) -> Tensor:
    """KL[sg(source) || target] summed over groups, averaged over all leading dims."""
    return categorical_kl(source_logits.detach(), target_logits).mean()


def gaussian_nll(mean: Tensor, target: Tensor, event_dims: int = 0) -> Tensor:
    """Negative log-likelihood under a unit-variance Gaussian.

    Args:
        mean: Predicted mean
        target: Observed value
        event_dims: Trailing dims summed into one event (3 for images)
    """
    dist = Normal(mean, torch.ones_like(mean))
    if event_dims:
        dist = Independent(dist, event_dims)
    return -dist.log_prob(target)
