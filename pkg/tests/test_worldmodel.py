"""Tests for categorical latents, the world model and its loss."""

import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from torch.func import functional_call

from src.data.replay import ReplayBuffer
from src.models.distributions import (
    balanced_kl,
    categorical_kl,
    domain_kl,
    gaussian_nll,
    sample_one_hot,
)
from src.models.worldmodel import RSSMState, WorldModel, wm_loss
from src.utils.errors import ConfigError, NumericError, ShapeError

from .conftest import random_episodes


@pytest.fixture
def world_model(config):
    torch.manual_seed(0)
    return WorldModel(config.model, config.target_env)


@pytest.fixture
def batch(config):
    episodes = random_episodes(config.target_env, 2, seed=3)
    sample = ReplayBuffer.offline(episodes).sample_sequences(2, 5, np.random.default_rng(0))
    return sample.to_torch()


def generator(seed=0):
    g = torch.Generator()
    g.manual_seed(seed)
    return g


# Distributions ------------------------------------------------------------

def test_sample_is_one_hot_with_softmax_gradient():
    logits = torch.randn(3, 4, 5, requires_grad=True)
    sample = sample_one_hot(logits, generator())
    assert torch.allclose(sample.detach().sum(-1), torch.ones(3, 4))
    assert set(sample.detach().unique().tolist()) <= {0.0, 1.0}

    weights = torch.randn(3, 4, 5)
    (sample * weights).sum().backward()
    probs = torch.softmax(logits.detach(), -1)
    expected = probs * (weights - (probs * weights).sum(-1, keepdim=True))
    assert torch.allclose(logits.grad, expected, atol=1e-6)


def test_sampling_follows_generator():
    logits = torch.randn(8, 4, 6)
    assert torch.equal(sample_one_hot(logits, generator(5)), sample_one_hot(logits, generator(5)))


def test_kl_of_identical_distributions_is_zero():
    logits = torch.randn(4, 3, 5)
    assert torch.allclose(categorical_kl(logits, logits), torch.zeros(4), atol=1e-6)
    assert domain_kl(logits, logits).item() == pytest.approx(0.0, abs=1e-6)


def test_kl_matches_hand_computed_value():
    p = torch.tensor([[0.5, 0.5], [0.9, 0.1]], dtype=torch.float64)
    q = torch.tensor([[0.9, 0.1], [0.5, 0.5]], dtype=torch.float64)
    expected = sum(
        sum(pi * math.log(pi / qi) for pi, qi in zip(p_row.tolist(), q_row.tolist()))
        for p_row, q_row in zip(p, q)
    )
    assert categorical_kl(p.log()[None], q.log()[None]).item() == pytest.approx(expected, rel=1e-9)


def test_domain_kl_only_trains_target_side():
    source = torch.randn(2, 3, 4, requires_grad=True)
    target = torch.randn(2, 3, 4, requires_grad=True)
    domain_kl(source, target).backward()
    assert source.grad is None
    assert target.grad is not None and target.grad.abs().sum() > 0


def test_free_nats_floor():
    logits = torch.randn(4, 3, 5)
    assert balanced_kl(logits, logits + 1e-3, 0.8, free_nats=1.0).item() == pytest.approx(1.0)


def test_kl_balance_splits_gradients():
    post = torch.randn(4, 3, 5, dtype=torch.float64, requires_grad=True)
    prior = torch.randn(4, 3, 5, dtype=torch.float64, requires_grad=True)
    balanced_kl(post, prior, balance=1.0, free_nats=0.0).backward()
    assert post.grad.abs().sum() == 0
    assert prior.grad.abs().sum() > 0


def test_balanced_kl_gradcheck():
    post = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
    prior = torch.randn(2, 3, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: balanced_kl(a, b, 0.8, 0.0), (post, prior))


def test_gaussian_nll_closed_form():
    mean = torch.tensor([0.0, 1.0], dtype=torch.float64)
    target = torch.tensor([0.5, -1.0], dtype=torch.float64)
    expected = 0.5 * (mean - target) ** 2 + 0.5 * math.log(2 * math.pi)
    assert torch.allclose(gaussian_nll(mean, target), expected)


# World model ---------------------------------------------------------------

def test_observe_shapes(world_model, batch, config):
    posterior, priors, embed = world_model.observe(batch["observations"], batch["actions"], batch["is_first"],
                                                   generator())
    m = config.model
    assert posterior.h.shape == (2, 5, m.deter_size)
    assert posterior.z_sample.shape == (2, 5, m.latent_groups, m.latent_classes)
    assert priors.shape == embed.shape == (2, 5, m.latent_groups, m.latent_classes)
    assert posterior.features().shape[-1] == world_model.feature_size


def test_is_first_restarts_from_initial_state(world_model, config):
    m = config.model
    embed = torch.randn(3, m.latent_groups, m.latent_classes)
    action = torch.ones(3, 2)
    fresh, _ = world_model.observe_step(None, action, embed, generator=generator(1))

    stale = RSSMState(torch.randn(3, m.deter_size), torch.zeros(3, m.latent_groups, m.latent_classes),
                      torch.zeros(3, m.latent_groups, m.latent_classes))
    reset, _ = world_model.observe_step(stale, action, embed, torch.ones(3, dtype=torch.bool),
                                        generator=generator(1))
    assert torch.allclose(fresh.h, reset.h)
    assert torch.equal(fresh.z_sample, reset.z_sample)


def test_encode_rejects_wrong_frame_shape(world_model):
    with pytest.raises(ShapeError):
        world_model.encode(torch.zeros(2, 8, 8, 3))


def test_image_size_must_divide_by_eight(config):
    with pytest.raises(ConfigError):
        WorldModel(config.model, replace(config.target_env, image_size=12))


def test_non_finite_state_raises(world_model, batch):
    with torch.no_grad():
        world_model.recurrent.weight_hh.fill_(float("nan"))
    with pytest.raises(NumericError):
        world_model.observe(batch["observations"], batch["actions"], batch["is_first"], generator())


def test_loss_is_deterministic(world_model, batch):
    first = wm_loss(world_model, batch, generator=generator(2))
    second = wm_loss(world_model, batch, generator=generator(2))
    assert first.loss.item() == second.loss.item()


def test_reward_and_discount_ignored_at_episode_start(world_model, batch):
    base = wm_loss(world_model, batch, generator=generator(4)).report
    changed = dict(batch)
    first = batch["is_first"]
    changed["rewards"] = torch.where(first, torch.full_like(batch["rewards"], 50.0), batch["rewards"])
    changed["discounts"] = torch.where(first, torch.zeros_like(batch["discounts"]), batch["discounts"])
    again = wm_loss(world_model, changed, generator=generator(4)).report
    assert again.reward_loss == pytest.approx(base.reward_loss)
    assert again.discount_loss == pytest.approx(base.discount_loss)


def test_domain_kl_needs_source_encoder(world_model, batch):
    with pytest.raises(ConfigError):
        wm_loss(world_model, batch, domain_kl_scale=1.0)


def test_domain_kl_leaves_source_encoder_untouched(world_model, batch, config):
    torch.manual_seed(1)
    source = WorldModel(config.model, config.source_env)
    output = wm_loss(world_model, batch, source_encoder=source.encode, domain_kl_scale=1.5,
                     generator=generator())
    output.loss.backward()
    assert all(p.grad is None for p in source.parameters())
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in world_model.encoder.parameters())
    assert output.report.domain_kl_loss > 0


def test_domain_kl_scale_moves_total(world_model, batch, config):
    torch.manual_seed(1)
    source = WorldModel(config.model, config.source_env)
    without = wm_loss(world_model, batch, source_encoder=source.encode, domain_kl_scale=0.0,
                      generator=generator()).report
    with_align = wm_loss(world_model, batch, source_encoder=source.encode, domain_kl_scale=2.0,
                         generator=generator()).report
    assert without.domain_kl_loss == pytest.approx(with_align.domain_kl_loss)
    assert with_align.total == pytest.approx(without.total + 2.0 * without.domain_kl_loss, rel=1e-5)


def test_reward_head_gradcheck(config):
    torch.manual_seed(0)
    model = WorldModel(config.model, config.target_env).to(torch.float64)
    features = torch.randn(4, model.feature_size, dtype=torch.float64)
    rewards = torch.rand(4, dtype=torch.float64)
    names = [name for name, _ in model.reward_head.named_parameters()]
    params = tuple(p.detach().clone().requires_grad_(True) for p in model.reward_head.parameters())

    def loss(*values):
        out = functional_call(model.reward_head, dict(zip(names, values)), (features,)).squeeze(-1)
        return gaussian_nll(out, rewards).mean()

    assert torch.autograd.gradcheck(loss, params)
