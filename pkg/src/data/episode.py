"""Episode records and their on-disk container format."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..envs.runner import EnvSpec, make_env, reset, step
from ..utils.container import EPISODE_MAGIC, read_container, write_container
from ..utils.errors import FormatError

_FIELDS = ("observations", "actions", "rewards", "discounts")


@dataclass
class Episode:
    """One rollout: T steps, T+1 frames.

    ``discounts`` holds raw 0/1 continuation flags, never multiplied by gamma.
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    discounts: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.uint8)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        self.rewards = np.asarray(self.rewards, dtype=np.float32)
        self.discounts = np.asarray(self.discounts, dtype=np.float32)
        self.validate()

    def validate(self) -> None:
        steps = len(self.rewards)
        if steps < 1:
            raise FormatError("episode must contain at least one step", field="rewards")
        if self.observations.ndim != 4 or len(self.observations) != steps + 1:
            raise FormatError(
                f"observations must be [T+1, H, W, C] with T={steps}, got {self.observations.shape}",
                field="observations",
            )
        if self.actions.ndim != 2 or len(self.actions) != steps:
            raise FormatError(f"actions must be [T, A] with T={steps}, got {self.actions.shape}",
                              field="actions")
        if self.discounts.shape != (steps,):
            raise FormatError(f"discounts must be [T] with T={steps}, got {self.discounts.shape}",
                              field="discounts")
        if not np.all((self.discounts == 0.0) | (self.discounts == 1.0)):
            raise FormatError("discounts must be raw 0/1 flags", field="discounts")
        if np.any(self.discounts[:-1] == 0.0):
            raise FormatError("only the final step may carry a zero discount flag", field="discounts")

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def num_frames(self) -> int:
        return len(self.observations)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum(dtype=np.float64))

    @property
    def terminated(self) -> bool:
        return bool(self.discounts[-1] == 0.0)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Episode):
            return NotImplemented
        return self.seed == other.seed and all(
            np.array_equal(getattr(self, name), getattr(other, name)) for name in _FIELDS
        )


class EpisodeRecorder:
    """Accumulates env transitions into an :class:`Episode`."""

    def __init__(self, first_observation: np.ndarray, seed: Optional[int] = None):
        self.seed = seed
        self.observations = [np.asarray(first_observation, dtype=np.uint8)]
        self.actions = []
        self.rewards = []
        self.discounts = []

    def add(self, action, observation, reward: float, discount_flag: float) -> None:
        self.actions.append(np.asarray(action, dtype=np.float32))
        self.observations.append(np.asarray(observation, dtype=np.uint8))
        self.rewards.append(reward)
        self.discounts.append(discount_flag)

    def __len__(self) -> int:
        return len(self.rewards)

    def finish(self) -> Episode:
        return Episode(
            observations=np.stack(self.observations),
            actions=np.stack(self.actions),
            rewards=np.asarray(self.rewards, dtype=np.float32),
            discounts=np.asarray(self.discounts, dtype=np.float32),
            seed=self.seed,
        )


def save_episode(episode: Episode, path: Path) -> None:
    """Write ``episode`` to ``path`` in the CWEP0001 container."""
    write_container(
        path,
        EPISODE_MAGIC,
        {name: getattr(episode, name) for name in _FIELDS},
        meta={"seed": episode.seed, "length": len(episode)},
    )


def load_episode(path: Path) -> Episode:
    """Read an episode written by :func:`save_episode`."""
    arrays, meta = read_container(path, EPISODE_MAGIC)
    missing = [name for name in _FIELDS if name not in arrays]
    if missing:
        raise FormatError(f"episode file {path} lacks arrays {missing}", field=missing[0])
    return Episode(seed=meta.get("seed"), **{name: arrays[name] for name in _FIELDS})


def replay_episode(env_spec: EnvSpec, episode: Episode) -> bool:
    """Re-step a fresh env with the stored actions and compare bit-exactly.

    Returns:
        True if every frame and reward matches the stored episode
    """
    if episode.seed is None:
        raise FormatError("episode has no recorded seed and cannot be replayed", field="seed")

    env = make_env(env_spec)
    if not np.array_equal(reset(env, seed=episode.seed), episode.observations[0]):
        return False

    for t, action in enumerate(episode.actions):
        result = step(env, action)
        if not np.array_equal(result.observation, episode.observations[t + 1]):
            return False
        if np.float32(result.reward) != episode.rewards[t]:
            return False
        if result.discount_flag != episode.discounts[t]:
            return False
    return True
