"""2x -> 4x cell upsampling used by the decoder to undo stride-2 max pooling.

Every pooled value expands into a 2x2 cell. The four fill schemes differ only
in how the three non-carried positions are populated:

  gaussian  pooled value placed bit-exact at the top-left, the other three
            positions drawn i.i.d. from N(0, sigma_c^2) with a per-channel
            sigma estimated from encoder activations
  zero      pooled value at the top-left, exact zeros elsewhere
  nearest   all four positions equal the pooled value
  argmax    pooled value at the position recorded by the matching pooling
            pass, exact zeros elsewhere

All schemes are linear in the input cells, so gradients pass through the
placed values untouched.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

SCHEMES = ("gaussian", "zero", "nearest", "argmax")

# in-cell position codes, row-major: 0 top-left, 1 top-right,
# 2 bottom-left, 3 bottom-right


def pool_with_positions(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Stride-2 2x2 max pool returning values and in-cell argmax codes.

    `x` may be (H, W), (C, H, W) or (B, C, H, W) with even H and W. The codes
    tensor has the pooled shape and values in {0, 1, 2, 3}. Ties resolve to
    the first (lowest-index) position, so the result is deterministic.
    """
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"spatial dims must be even, got {tuple(x.shape[-2:])}")
    squeeze = 4 - x.dim()
    if squeeze < 0 or squeeze > 2:
        raise ValueError(f"expected 2-4 dims, got {x.dim()}")
    x4 = x.reshape((1,) * squeeze + x.shape)
    pooled, flat = F.max_pool2d(x4, kernel_size=2, stride=2, return_indices=True)
    w = x4.shape[-1]
    codes = (flat // w % 2) * 2 + (flat % w % 2)
    shape = x.shape[:-2] + pooled.shape[-2:]
    return pooled.reshape(shape), codes.reshape(shape)


def _channel_sigma(cells: torch.Tensor, sigma) -> torch.Tensor:
    """Broadcast per-channel sigma against `cells` (channel dim = -3 if any)."""
    s = torch.as_tensor(sigma, dtype=cells.dtype, device=cells.device)
    if s.dim() == 0:
        return s
    if s.dim() != 1:
        raise ValueError("sigma must be a scalar or a 1-D per-channel tensor")
    if cells.dim() < 3 or cells.shape[-3] != s.shape[0]:
        raise ValueError(
            f"per-channel sigma of length {s.shape[0]} does not match input "
            f"shape {tuple(cells.shape)}"
        )
    return s.view(-1, 1, 1)


def upsample_cells(
    cells: torch.Tensor,
    scheme: str,
    sigma=None,
    positions: torch.Tensor | None = None,
    rng: torch.Generator | None = None,
) -> torch.Tensor:
    """Expand each value of `cells` into a 2x2 cell per `scheme`.

    Output doubles the last two dims. `sigma` and `rng` are required for the
    gaussian scheme, `positions` (codes from `pool_with_positions`) for the
    argmax scheme; each is ignored otherwise.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    h, w = cells.shape[-2:]
    out = cells.new_zeros(cells.shape[:-2] + (2 * h, 2 * w))
    if scheme == "nearest":
        out[..., 0::2, 0::2] = cells
        out[..., 0::2, 1::2] = cells
        out[..., 1::2, 0::2] = cells
        out[..., 1::2, 1::2] = cells
        return out
    if scheme == "argmax":
        if positions is None:
            raise ValueError("argmax scheme needs the recorded pooling positions")
        if positions.shape != cells.shape:
            raise ValueError("positions shape must match cells shape")
        for code in range(4):
            sub = out[..., code // 2 :: 2, code % 2 :: 2]
            mask = positions == code
            sub[mask] = cells[mask]
        return out
    # gaussian and zero both carry the pooled value at the top-left
    out[..., 0::2, 0::2] = cells
    if scheme == "gaussian":
        if sigma is None or rng is None:
            raise ValueError("gaussian scheme needs sigma and rng")
        s = _channel_sigma(cells, sigma)
        for dr, dc in ((0, 1), (1, 0), (1, 1)):
            noise = torch.randn(cells.shape, generator=rng, dtype=cells.dtype)
            out[..., dr::2, dc::2] = noise * s
    return out
