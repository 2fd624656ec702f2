"""Episodes, replay buffers and offline datasets."""

from .episode import Episode, EpisodeRecorder, load_episode, replay_episode, save_episode
from .replay import OFFLINE, ONLINE, ReplayBuffer, SequenceBatch

__all__ = [
    "Episode",
    "EpisodeRecorder",
    "OFFLINE",
    "ONLINE",
    "ReplayBuffer",
    "SequenceBatch",
    "load_episode",
    "replay_episode",
    "save_episode",
]
