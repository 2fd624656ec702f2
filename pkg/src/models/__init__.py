"""World model and actor-critic networks."""

from .behavior import (
    Actor,
    Critic,
    CriticLossReport,
    ImaginedRollout,
    act,
    actor_loss,
    critic_loss,
    imagine_trajectories,
    lambda_returns,
    rollout_returns,
    update_slow_critic,
)
from .worldmodel import RSSMState, WMLossReport, WorldModel, wm_loss

__all__ = [
    "Actor",
    "Critic",
    "CriticLossReport",
    "ImaginedRollout",
    "RSSMState",
    "WMLossReport",
    "WorldModel",
    "act",
    "actor_loss",
    "critic_loss",
    "imagine_trajectories",
    "lambda_returns",
    "rollout_returns",
    "update_slow_critic",
    "wm_loss",
]
