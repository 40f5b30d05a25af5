"""Region-wise convolutional transform of encoder feature maps.

The feature map is cut into a grid x grid lattice of equal regions; each
region gets its own full convolution kernel (all channels to all channels)
applied with zero padding inside the region only, so regions never exchange
information. Channel count and spatial size are preserved. Initialized at
(or near) the identity so optimization starts from a no-op.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class RegionalConv(nn.Module):
    """Independent per-region convolution with kernels (g, g, C, C, m, m)."""

    def __init__(
        self,
        channels: int,
        grid: int = 2,
        kernel_size: int = 3,
        init_noise_std: float = 1e-3,
        rng: torch.Generator | None = None,
    ):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd to preserve region shape")
        if grid < 1 or channels < 1:
            raise ValueError("grid and channels must be positive")
        self.channels = channels
        self.grid = grid
        self.kernel_size = kernel_size
        base = torch.zeros(grid, grid, channels, channels, kernel_size, kernel_size)
        center = kernel_size // 2
        idx = torch.arange(channels)
        base[:, :, idx, idx, center, center] = 1.0
        if init_noise_std > 0:
            noise = torch.randn(base.shape, generator=rng) * init_noise_std
            base = base + noise
        self.kernels = nn.Parameter(base)

    def forward(self, a: torch.Tensor) -> torch.Tensor:
        if a.dim() != 4:
            raise ValueError(f"expected (B, C, H, W), got {tuple(a.shape)}")
        b, c, h, w = a.shape
        if c != self.channels:
            raise ValueError(f"module built for {self.channels} channels, got {c}")
        if h % self.grid or w % self.grid:
            raise ValueError(
                f"spatial dims {(h, w)} not divisible by grid {self.grid}"
            )
        rh, rw = h // self.grid, w // self.grid
        pad = self.kernel_size // 2
        rows = []
        for i in range(self.grid):
            cols = []
            for j in range(self.grid):
                region = a[:, :, i * rh : (i + 1) * rh, j * rw : (j + 1) * rw]
                cols.append(F.conv2d(region, self.kernels[i, j], padding=pad))
            rows.append(torch.cat(cols, dim=3))
        return torch.cat(rows, dim=2)
