"""Trigger functions: blend, sinusoidal signal, tone-curve filters, warping.

Every trigger maps [0,1] images to [0,1] images and is deterministic given
its parameters (warp fields and blend patterns are seeded, never drawn per
call). Inputs may be single images (C, H, W) or batches (B, C, H, W).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from bdharden.seeding import make_rng

FILTER_IDS = ("gotham_like", "nashville_like", "toaster_like")

# per-channel (p, q) for the tone curve v + v(1-v)(p + q*v); endpoints are
# preserved for any coefficients, and these stay strictly monotone on [0,1]
_FILTER_CURVES = {
    "gotham_like": ((-0.25, 0.10), (-0.10, 0.05), (0.20, -0.10)),
    "nashville_like": ((0.25, -0.15), (0.10, -0.05), (-0.20, 0.10)),
    "toaster_like": ((0.30, -0.20), (0.05, 0.00), (-0.25, 0.10)),
}
_TOASTER_DARKEN = 0.3


def make_blend_pattern(
    shape: tuple[int, ...], seed: int = 0
) -> torch.Tensor:
    """Seeded uniform-noise pattern image in [0,1]."""
    return torch.rand(shape, generator=make_rng(seed))


def blend_trigger(
    x: torch.Tensor, pattern: torch.Tensor, alpha: float
) -> torch.Tensor:
    """(1-alpha) * x + alpha * pattern, clamped to [0,1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if pattern.shape != x.shape[-3:]:
        raise ValueError(
            f"pattern shape {tuple(pattern.shape)} does not match image "
            f"shape {tuple(x.shape[-3:])}"
        )
    return ((1.0 - alpha) * x + alpha * pattern).clamp(0.0, 1.0)


def sig_trigger(x: torch.Tensor, delta: float = 20.0, freq: float = 6.0) -> torch.Tensor:
    """Add a horizontal sinusoid over columns, identical for every channel.

    The amplitude `delta` is in 0-255 pixel units; column j of a width-W
    image receives (delta/255) * sin(2*pi*freq*j / W).
    """
    w = x.shape[-1]
    j = torch.arange(w, dtype=x.dtype)
    wave = (delta / 255.0) * torch.sin(2.0 * math.pi * freq * j / w)
    return (x + wave).clamp(0.0, 1.0)


def tone_curve(v: torch.Tensor, p: float, q: float) -> torch.Tensor:
    """Cubic curve v + v(1-v)(p + q*v); maps 0 to 0 and 1 to 1 exactly."""
    return v + v * (1.0 - v) * (p + q * v)


def filter_trigger(x: torch.Tensor, filter_id: str) -> torch.Tensor:
    """Deterministic color filter: per-channel tone curves, optional falloff.

    toaster_like additionally multiplies by a radial factor that is smallest
    at the image center, so the middle comes out darker than the borders.
    """
    if filter_id not in FILTER_IDS:
        raise ValueError(f"unknown filter {filter_id!r}, expected {FILTER_IDS}")
    if x.shape[-3] != 3:
        raise ValueError("filters are defined for 3-channel images")
    curves = _FILTER_CURVES[filter_id]
    channels = [
        tone_curve(x[..., c, :, :], *curves[c]) for c in range(3)
    ]
    out = torch.stack(channels, dim=-3)
    if filter_id == "toaster_like":
        h, w = x.shape[-2:]
        rows = torch.arange(h, dtype=x.dtype) - (h - 1) / 2.0
        cols = torch.arange(w, dtype=x.dtype) - (w - 1) / 2.0
        r = torch.sqrt(rows[:, None] ** 2 + cols[None, :] ** 2)
        factor = 1.0 - _TOASTER_DARKEN * (1.0 - r / r.max())
        out = out * factor
    return out.clamp(0.0, 1.0)


def make_warp_field(
    image_size: int, grid_k: int = 4, strength: float = 0.5, seed: int = 0
) -> torch.Tensor:
    """Dense (H, W, 2) pixel-displacement field from k x k control points.

    Control offsets are seeded uniform in [-1, 1], bicubic-upsampled to the
    image size, then rescaled so the largest displacement magnitude equals
    `strength` pixels. strength 0 gives the all-zero field.
    """
    if grid_k < 2:
        raise ValueError("grid_k must be at least 2")
    if strength < 0:
        raise ValueError("strength must be non-negative")
    control = (
        torch.rand((1, 2, grid_k, grid_k), generator=make_rng(seed)) * 2.0 - 1.0
    )
    dense = F.interpolate(
        control, size=(image_size, image_size), mode="bicubic", align_corners=True
    )[0]
    magnitude = dense.pow(2).sum(dim=0).sqrt().max()
    if strength == 0 or magnitude == 0:
        return torch.zeros((image_size, image_size, 2))
    dense = dense * (strength / magnitude)
    return dense.permute(1, 2, 0).contiguous()


def mean_displacement(field: torch.Tensor) -> float:
    """Mean Euclidean displacement magnitude over the field, in pixels."""
    return float(field.double().pow(2).sum(dim=-1).sqrt().mean().item())


def warp_image(x: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    """Bilinear warp by a pixel-displacement field shared across the batch."""
    squeeze = x.dim() == 3
    x4 = x.unsqueeze(0) if squeeze else x
    b, _, h, w = x4.shape
    if field.shape != (h, w, 2):
        raise ValueError(
            f"field shape {tuple(field.shape)} does not match image {h}x{w}"
        )
    rows = torch.arange(h, dtype=x4.dtype)
    cols = torch.arange(w, dtype=x4.dtype)
    base_y = rows[:, None].expand(h, w)
    base_x = cols[None, :].expand(h, w)
    # field[..., 0] displaces columns (x), field[..., 1] rows (y)
    sample_x = base_x + field[..., 0]
    sample_y = base_y + field[..., 1]
    norm_x = 2.0 * sample_x / (w - 1) - 1.0
    norm_y = 2.0 * sample_y / (h - 1) - 1.0
    grid = torch.stack((norm_x, norm_y), dim=-1).unsqueeze(0).expand(b, h, w, 2)
    out = F.grid_sample(
        x4, grid, mode="bilinear", padding_mode="border", align_corners=True
    )
    out = out.clamp(0.0, 1.0)
    return out.squeeze(0) if squeeze else out


def wanet_trigger(
    x: torch.Tensor, grid_k: int = 4, strength: float = 0.5, seed: int = 0
) -> torch.Tensor:
    """Elastic warp with a fixed seeded field; strength 0 returns x."""
    field = make_warp_field(x.shape[-1], grid_k, strength, seed)
    if strength == 0:
        return x.clone()
    return warp_image(x, field)
