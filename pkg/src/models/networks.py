"""Building blocks: MLPs and the conv encoder/decoder for square RGB frames."""

from typing import Sequence

import torch
import torch.nn as nn
from torch import Tensor


def mlp(in_dim: int, out_dim: int, hidden: int, layers: int = 2, act=nn.ELU) -> nn.Sequential:
    modules = []
    dim = in_dim
    for _ in range(layers):
        modules += [nn.Linear(dim, hidden), act()]
        dim = hidden
    modules.append(nn.Linear(dim, out_dim))
    return nn.Sequential(*modules)


def preprocess(observations: Tensor, dtype: torch.dtype = torch.float32) -> Tensor:
    """uint8 frames -> float in [-0.5, 0.5]."""
    return observations.to(dtype) / 255.0 - 0.5


class ConvEncoder(nn.Module):
    """Frame [..., H, W, C] -> flat features [..., out_dim]; three stride-2 convs."""

    def __init__(self, image_size: int, channels: int, depth: int, out_dim: int):
        super().__init__()
        self.image_size = image_size
        self.channels = channels
        self.convs = nn.Sequential(
            nn.Conv2d(channels, depth, 4, 2, 1), nn.ELU(),
            nn.Conv2d(depth, 2 * depth, 4, 2, 1), nn.ELU(),
            nn.Conv2d(2 * depth, 4 * depth, 4, 2, 1), nn.ELU(),
        )
        spatial = image_size // 8
        self.head = nn.Linear(4 * depth * spatial * spatial, out_dim)

    def forward(self, images: Tensor) -> Tensor:
        lead: Sequence[int] = images.shape[:-3]
        x = images.reshape(-1, self.image_size, self.image_size, self.channels).permute(0, 3, 1, 2)
        x = self.convs(x).flatten(1)
        out = self.head(x)
        return out.reshape(*lead, out.shape[-1])


class ConvDecoder(nn.Module):
    """Features [..., in_dim] -> image mean [..., H, W, C]."""

    def __init__(self, in_dim: int, image_size: int, channels: int, depth: int):
        super().__init__()
        self.image_size = image_size
        self.channels = channels
        self.depth = depth
        self.spatial = image_size // 8
        self.head = nn.Linear(in_dim, 4 * depth * self.spatial * self.spatial)
        self.deconvs = nn.Sequential(
            nn.ELU(),
            nn.ConvTranspose2d(4 * depth, 2 * depth, 4, 2, 1), nn.ELU(),
            nn.ConvTranspose2d(2 * depth, depth, 4, 2, 1), nn.ELU(),
            nn.ConvTranspose2d(depth, channels, 4, 2, 1),
        )

    def forward(self, features: Tensor) -> Tensor:
        lead = features.shape[:-1]
        x = self.head(features.reshape(-1, features.shape[-1]))
        x = x.reshape(-1, 4 * self.depth, self.spatial, self.spatial)
        x = self.deconvs(x).permute(0, 2, 3, 1)
        return x.reshape(*lead, self.image_size, self.image_size, self.channels)
