import numpy as np
import torch

from bdharden.backdoor.normalize import (
    ChannelAlign,
    batch_channel_stats,
    sample_channel_stats,
)
from bdharden.seeding import make_rng

import pytest


def test_sample_stats_match_numpy():
    x = torch.rand(4, 3, 8, 8, generator=make_rng(0))
    mean, std = sample_channel_stats(x)
    ref = x.numpy()
    np.testing.assert_allclose(
        mean.numpy(), ref.mean(axis=(2, 3)), rtol=0, atol=1e-6
    )
    np.testing.assert_allclose(
        std.numpy(), ref.std(axis=(2, 3)), rtol=0, atol=1e-6
    )


def test_output_stats_hit_targets():
    x = torch.rand(8, 3, 16, 16, generator=make_rng(1))
    target_mean = torch.tensor([0.2, 0.5, 0.8])
    target_std = torch.tensor([0.1, 0.2, 0.05])
    mod = ChannelAlign(target_mean, target_std)
    y = mod(x)
    mean, std = sample_channel_stats(y)
    assert (mean - target_mean).abs().max() < 1e-5
    assert (std - target_std).abs().max() < 1e-5


def test_from_batch_is_identity_on_average_stats():
    x = torch.rand(16, 3, 8, 8, generator=make_rng(2))
    mod = ChannelAlign.from_batch(x)
    y = mod(x)
    bm, bs = batch_channel_stats(x)
    ym, ys = batch_channel_stats(y)
    assert torch.allclose(ym, bm, atol=1e-5)
    assert torch.allclose(ys, bs, atol=1e-5)


def test_single_sample_with_own_stats_is_identity():
    x = torch.rand(1, 3, 8, 8, generator=make_rng(3))
    mean, std = sample_channel_stats(x)
    mod = ChannelAlign(mean[0], std[0])
    y = mod(x)
    assert (y - x).abs().max() < 1e-5


def test_constant_channel_guard_counts_and_stays_finite():
    x = torch.full((2, 3, 4, 4), 0.5)
    mod = ChannelAlign(torch.zeros(3), torch.ones(3))
    y = mod(x)
    assert torch.isfinite(y).all()
    assert mod.degenerate_channels == 6


def test_rejects_bad_targets_and_channel_mismatch():
    with pytest.raises(ValueError):
        ChannelAlign(torch.zeros(3), torch.tensor([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        ChannelAlign(torch.zeros(3), torch.ones(2))
    mod = ChannelAlign(torch.zeros(3), torch.ones(3))
    with pytest.raises(ValueError):
        mod(torch.rand(1, 4, 8, 8))


def test_gradients_reach_targets():
    x = torch.rand(4, 3, 8, 8, generator=make_rng(4))
    mod = ChannelAlign(torch.zeros(3), torch.ones(3))
    mod(x).sum().backward()
    assert mod.target_mean.grad is not None
    assert mod.target_std.grad is not None
    assert mod.target_mean.grad.abs().sum() > 0


def test_projection_restores_positive_std():
    mod = ChannelAlign(torch.zeros(3), torch.ones(3))
    with torch.no_grad():
        mod.target_std[1] = -0.3
    mod.project_()
    assert (mod.target_std > 0).all()


def test_scale_invariance_property():
    # aligning x and aligning 5 * x + 1 give the same output
    x = torch.rand(4, 3, 8, 8, generator=make_rng(5))
    mod = ChannelAlign(torch.tensor([0.4, 0.4, 0.4]), torch.tensor([0.2, 0.2, 0.2]))
    y1 = mod(x)
    y2 = mod(5.0 * x + 1.0)
    assert (y1 - y2).abs().max() < 1e-4
