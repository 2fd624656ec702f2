"""Replay buffers and sequence sampling."""

import json
import logging
import threading
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import torch

from ..utils.errors import ConfigError, EmptyDatasetError, FormatError, ImmutableBufferError
from .episode import Episode, load_episode

logger = logging.getLogger(__name__)

ONLINE = "online"
OFFLINE = "offline"


@dataclass
class SequenceBatch:
    """B frame-aligned slices of length L.

    Element i of a row holds frame o_i, the action that produced it, the
    reward received on arriving and its continuation flag. At episode
    starts (``is_first``) action and reward are zero and the flag is one.
    """

    observations: np.ndarray  # uint8 [B, L, H, W, C]
    actions: np.ndarray  # float32 [B, L, A]
    rewards: np.ndarray  # float32 [B, L]
    discounts: np.ndarray  # float32 [B, L]
    is_first: np.ndarray  # bool [B, L]

    @property
    def batch_size(self) -> int:
        return self.observations.shape[0]

    @property
    def length(self) -> int:
        return self.observations.shape[1]

    def to_torch(self, device: str = "cpu", dtype: torch.dtype = torch.float32) -> Dict[str, torch.Tensor]:
        return {
            "observations": torch.as_tensor(self.observations, device=device),
            "actions": torch.as_tensor(self.actions, device=device, dtype=dtype),
            "rewards": torch.as_tensor(self.rewards, device=device, dtype=dtype),
            "discounts": torch.as_tensor(self.discounts, device=device, dtype=dtype),
            "is_first": torch.as_tensor(self.is_first, device=device),
        }


def episode_slice(episode: Episode, start: int, length: int) -> Tuple[np.ndarray, ...]:
    """Cut ``length`` frame-aligned elements beginning at frame ``start``."""
    frames = np.arange(start, start + length)
    observations = episode.observations[frames]

    prev = frames - 1
    first = frames == 0
    safe_prev = np.maximum(prev, 0)
    actions = np.where(first[:, None], 0.0, episode.actions[safe_prev]).astype(np.float32)
    rewards = np.where(first, 0.0, episode.rewards[safe_prev]).astype(np.float32)
    discounts = np.where(first, 1.0, episode.discounts[safe_prev]).astype(np.float32)
    return observations, actions, rewards, discounts, first


class ReplayBuffer:
    """Episode store with an online (append-only, evicting) or offline (frozen) mode."""

    def __init__(self, capacity: int = 200_000, mode: str = ONLINE):
        if mode not in (ONLINE, OFFLINE):
            raise ConfigError(f"unknown buffer mode '{mode}'", fields=["mode"])
        if capacity < 1:
            raise ConfigError(f"capacity must be >= 1, got {capacity}", fields=["capacity"])
        self.capacity = capacity
        self.mode = mode
        self._episodes: deque = deque()
        self._steps = 0
        self._lock = threading.Lock()
        self._frozen = False

    def __len__(self) -> int:
        return len(self._episodes)

    @property
    def num_steps(self) -> int:
        return self._steps

    @property
    def frozen(self) -> bool:
        return self._frozen

    def episodes(self) -> Tuple[Episode, ...]:
        """Immutable snapshot of the stored episodes."""
        with self._lock:
            return tuple(self._episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes())

    def append_episode(self, episode: Episode) -> int:
        """Store ``episode``, evicting the oldest ones past capacity.

        Returns:
            Stored step count after the append
        """
        if self.mode == OFFLINE or self._frozen:
            raise ImmutableBufferError("offline buffers are immutable; the target domain has no online access")
        if len(episode) > self.capacity:
            raise ConfigError(
                f"episode of {len(episode)} steps exceeds buffer capacity {self.capacity}",
                fields=["capacity"],
            )

        with self._lock:
            self._episodes.append(episode)
            self._steps += len(episode)
            while self._steps > self.capacity:
                evicted = self._episodes.popleft()
                self._steps -= len(evicted)
                logger.debug("Evicted episode of %d steps", len(evicted))
            return self._steps

    def freeze(self) -> None:
        self._frozen = True

    @classmethod
    def offline(cls, episodes: List[Episode], capacity: Optional[int] = None) -> "ReplayBuffer":
        """Build a frozen offline buffer holding ``episodes``."""
        total = sum(len(e) for e in episodes)
        buffer = cls(capacity=max(capacity or total, total, 1), mode=OFFLINE)
        buffer._episodes.extend(episodes)
        buffer._steps = total
        buffer._frozen = True
        return buffer

    @classmethod
    def load_directory(cls, directory: Path) -> "ReplayBuffer":
        """Load a dataset directory (manifest.json + episode files) as an offline buffer."""
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise FormatError(f"no manifest.json in {directory}", field="manifest")
        try:
            manifest = json.loads(manifest_path.read_text())
            entries = manifest["episodes"]
        except (json.JSONDecodeError, KeyError) as e:
            raise FormatError(f"malformed manifest in {directory}: {e}", field="manifest") from e

        episodes = [load_episode(directory / entry["file"]) for entry in entries]
        logger.info("Loaded %d offline episodes (%d steps) from %s",
                    len(episodes), sum(len(e) for e in episodes), directory)
        return cls.offline(episodes)

    def sample_sequences(self, batch_size: int, length: int, rng: np.random.Generator) -> SequenceBatch:
        """Draw ``batch_size`` slices uniformly over (episode, start) pairs."""
        if batch_size < 1 or length < 1:
            raise ConfigError(f"batch size and length must be >= 1, got {batch_size}, {length}",
                              fields=["batch_size", "seq_len"])

        eligible = [e for e in self.episodes() if e.num_frames >= length]
        if not eligible:
            raise EmptyDatasetError(f"no stored episode has at least {length} frames")

        starts_per_episode = np.array([e.num_frames - length + 1 for e in eligible], dtype=np.int64)
        cumulative = np.cumsum(starts_per_episode)
        draws = rng.integers(0, cumulative[-1], size=batch_size)
        episode_index = np.searchsorted(cumulative, draws, side="right")
        offsets = draws - np.concatenate([[0], cumulative[:-1]])[episode_index]

        rows = [episode_slice(eligible[i], int(s), length) for i, s in zip(episode_index, offsets)]
        observations, actions, rewards, discounts, is_first = (np.stack(parts) for parts in zip(*rows))
        return SequenceBatch(observations, actions, rewards, discounts, is_first)
