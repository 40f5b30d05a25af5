"""Differentiable structural-similarity index with a Gaussian window.

Population (not sample) local moments, Gaussian weights, and border cropping
via valid convolution: interior window positions only. For images in [0, 1]
use data_range=1.0. The companion distance `1 - ssim` is what loss code
minimizes; identical images give distance exactly 0.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def gaussian_window(size: int, sigma: float, dtype=torch.float32) -> torch.Tensor:
    """Normalized 2-D Gaussian window of odd `size`."""
    if size % 2 != 1 or size < 3:
        raise ValueError("window size must be odd and >= 3")
    half = size // 2
    coords = torch.arange(-half, half + 1, dtype=dtype)
    g1 = torch.exp(-(coords**2) / (2.0 * sigma * sigma))
    g2 = torch.outer(g1, g1)
    return g2 / g2.sum()


def ssim_index(
    x: torch.Tensor,
    y: torch.Tensor,
    window_size: int = 11,
    sigma: float = 1.5,
    data_range: float = 1.0,
) -> torch.Tensor:
    """Mean SSIM between two (B, C, H, W) image batches.

    Channels are scored independently and averaged, matching the common
    multichannel convention. Requires window_size <= min(H, W).
    """
    if x.shape != y.shape or x.dim() != 4:
        raise ValueError("inputs must share a (B, C, H, W) shape")
    b, c, h, w = x.shape
    if window_size > min(h, w):
        raise ValueError(
            f"window {window_size} larger than image {min(h, w)}; pass a "
            "smaller window_size"
        )
    win = gaussian_window(window_size, sigma, dtype=x.dtype)
    kernel = win.expand(c, 1, window_size, window_size).contiguous()

    def blur(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, kernel, groups=c)

    mu_x = blur(x)
    mu_y = blur(y)
    var_x = blur(x * x) - mu_x * mu_x
    var_y = blur(y * y) - mu_y * mu_y
    cov = blur(x * y) - mu_x * mu_y

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return (num / den).mean()


def ssim_distance(
    x: torch.Tensor,
    y: torch.Tensor,
    window_size: int = 11,
    sigma: float = 1.5,
    data_range: float = 1.0,
) -> torch.Tensor:
    """1 - SSIM; zero for identical images, larger means less similar."""
    return 1.0 - ssim_index(x, y, window_size, sigma, data_range)
