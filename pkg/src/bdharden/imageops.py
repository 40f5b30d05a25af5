"""Small image-batch utilities shared by training loops."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def random_crop_flip(
    x: torch.Tensor, rng: torch.Generator, pad: int = 4
) -> torch.Tensor:
    """Standard light augmentation: zero-pad, random crop back, random h-flip."""
    b, c, h, w = x.shape
    padded = F.pad(x, (pad, pad, pad, pad))
    tops = torch.randint(0, 2 * pad + 1, (b,), generator=rng)
    lefts = torch.randint(0, 2 * pad + 1, (b,), generator=rng)
    out = torch.empty_like(x)
    for i in range(b):
        t, l = int(tops[i]), int(lefts[i])
        out[i] = padded[i, :, t : t + h, l : l + w]
    flip = torch.rand(b, generator=rng) < 0.5
    out[flip] = out[flip].flip(-1)
    return out


def minibatch_indices(
    n: int, batch_size: int, rng: torch.Generator | None = None
):
    """Yield index tensors covering 0..n-1, shuffled when rng is given."""
    order = torch.randperm(n, generator=rng) if rng is not None else torch.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]
