"""Per-channel statistics of encoder activations feeding the noise fill."""

from __future__ import annotations

import torch

from ..imageops import minibatch_indices
from .networks import Encoder


@torch.no_grad()
def collect_channel_stats(
    encoder: Encoder, images: torch.Tensor, batch_size: int = 256
) -> list[torch.Tensor]:
    """Population std of pre-pool activations, per channel, per stage.

    Accumulates first and second moments in float64 over every spatial
    position of every image, one pass, deterministic for a fixed dataset
    order. Returns one (C_s,) float32 tensor per pooling stage, ordered
    stage 1..truncation.
    """
    upto = encoder.truncate_after
    count = [0] * upto
    total = [None] * upto
    total_sq = [None] * upto
    for idx in minibatch_indices(images.shape[0], batch_size):
        _, _, pre_pool = encoder.classifier.features(
            images[idx], upto, keep_pre_pool=True
        )
        for s, act in enumerate(pre_pool):
            a64 = act.double()
            per_ch = a64.sum(dim=(0, 2, 3))
            per_ch_sq = (a64 * a64).sum(dim=(0, 2, 3))
            n = act.shape[0] * act.shape[2] * act.shape[3]
            if total[s] is None:
                total[s] = per_ch
                total_sq[s] = per_ch_sq
            else:
                total[s] = total[s] + per_ch
                total_sq[s] = total_sq[s] + per_ch_sq
            count[s] += n
    sigmas = []
    for s in range(upto):
        mean = total[s] / count[s]
        var = total_sq[s] / count[s] - mean * mean
        sigmas.append(var.clamp_min(0.0).sqrt().float())
    return sigmas
