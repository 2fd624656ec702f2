"""Seeding helpers for reproducible runs."""

import random

import numpy as np
import torch


def seed_everything(seed: int, single_thread: bool = True) -> torch.Generator:
    """Seed python, numpy and torch and return a dedicated torch generator.

    Args:
        seed: Base seed
        single_thread: Pin torch to one intra-op thread so reductions are bit-stable

    Returns:
        A ``torch.Generator`` seeded with ``seed`` for latent/action sampling
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if single_thread:
        torch.set_num_threads(1)
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator
