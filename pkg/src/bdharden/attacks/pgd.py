"""Projected gradient descent in the L-infinity ball, on [0,1] images."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from bdharden.imageops import minibatch_indices
from bdharden.modelops import frozen
from bdharden.seeding import make_rng


def pgd_attack(
    model: nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    eps: float,
    steps: int = 10,
    step_size: float | None = None,
    random_start: bool = True,
    seed: int = 0,
    batch_size: int = 128,
) -> torch.Tensor:
    """Untargeted PGD: ascend the cross-entropy of the true labels.

    Every output satisfies ||adv - x||_inf <= eps (as stored values, so the
    bound survives float32 rounding) and lies in [0,1]. One random start
    inside the ball when `random_start` is set; sign steps of `step_size`
    (eps/4 by default) with projection after every step.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if step_size is None:
        step_size = eps / 4.0
    # Final projection radius backs off by a hair so that rounding the
    # result to the image dtype cannot push the stored difference past eps.
    margin = min(1e-7, eps * 1e-3)
    rng = make_rng(seed)
    out = images.clone()
    with frozen(model):
        for idx in minibatch_indices(images.shape[0], batch_size):
            x = images[idx]
            y = labels[idx]
            if random_start:
                delta = (torch.rand(x.shape, generator=rng) * 2.0 - 1.0) * eps
            else:
                delta = torch.zeros_like(x)
            delta = ((x + delta).clamp(0.0, 1.0) - x).detach()
            for _ in range(steps):
                delta.requires_grad_(True)
                loss = F.cross_entropy(model(x + delta), y)
                (grad,) = torch.autograd.grad(loss, delta)
                with torch.no_grad():
                    delta = delta + step_size * grad.sign()
                    delta = delta.clamp(-eps, eps)
                    delta = (x + delta).clamp(0.0, 1.0) - x
                delta = delta.detach()
            x64 = x.double()
            d64 = delta.double().clamp(-(eps - margin), eps - margin)
            out[idx] = (x64 + d64).to(images.dtype).clamp(0.0, 1.0)
    return out
