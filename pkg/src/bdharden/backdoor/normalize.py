"""Per-sample channel-statistic alignment, the generator's first stage.

Each input sample is standardized per channel (its own spatial mean and
standard deviation) and re-scaled to trainable per-channel targets that are
shared across samples. Optimizing the targets shifts the global color/contrast
statistics of every generated sample coherently, which is the cheap half of
the perturbation space; spatial structure comes from the regional layer.
"""

from __future__ import annotations

import torch
from torch import nn

_EPS = 1e-6


def sample_channel_stats(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample per-channel spatial mean and population std of (B, C, H, W)."""
    if x.dim() != 4:
        raise ValueError(f"expected (B, C, H, W), got {tuple(x.shape)}")
    mean = x.mean(dim=(2, 3))
    std = x.std(dim=(2, 3), unbiased=False)
    return mean, std


def batch_channel_stats(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Average of the per-sample channel statistics over a batch.

    Returns 1-D (C,) tensors: the mean of per-sample means and the mean of
    per-sample stds. These are the usual initialization and regularization
    targets for `ChannelAlign`.
    """
    mean, std = sample_channel_stats(x)
    return mean.mean(dim=0), std.mean(dim=0)


class ChannelAlign(nn.Module):
    """x -> (x - mu_x) / sigma_x * target_std + target_mean, per channel.

    mu_x / sigma_x are the sample's own spatial statistics, so the output's
    per-channel mean and std equal the targets exactly (up to float error)
    for every sample. Population std convention throughout. A constant
    channel (sigma_x = 0) is guarded with a 1e-6 floor and counted in
    `degenerate_channels` after the forward pass.
    """

    def __init__(self, target_mean: torch.Tensor, target_std: torch.Tensor):
        super().__init__()
        target_mean = torch.as_tensor(target_mean, dtype=torch.float32).flatten()
        target_std = torch.as_tensor(target_std, dtype=torch.float32).flatten()
        if target_mean.shape != target_std.shape:
            raise ValueError("target mean/std must have the same length")
        if (target_std <= 0).any():
            raise ValueError("target std must be positive")
        self.target_mean = nn.Parameter(target_mean.clone())
        self.target_std = nn.Parameter(target_std.clone())
        self.degenerate_channels = 0

    @classmethod
    def from_batch(cls, x: torch.Tensor) -> "ChannelAlign":
        """Targets initialized to the batch-average statistics of `x`."""
        mean, std = batch_channel_stats(x)
        return cls(mean, std.clamp_min(_EPS))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean, std = sample_channel_stats(x)
        self.degenerate_channels = int((std == 0).sum().item())
        std = std.clamp_min(_EPS)
        c = x.shape[1]
        if c != self.target_mean.shape[0]:
            raise ValueError(
                f"module has {self.target_mean.shape[0]} channels, input has {c}"
            )
        scaled = (x - mean.view(-1, c, 1, 1)) / std.view(-1, c, 1, 1)
        return scaled * self.target_std.view(1, c, 1, 1) + self.target_mean.view(
            1, c, 1, 1
        )

    def project_(self, floor: float = 1e-4) -> None:
        """Clamp target std to stay positive; call after optimizer steps."""
        with torch.no_grad():
            self.target_std.clamp_(min=floor)
