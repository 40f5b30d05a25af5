"""Shared fixtures-as-code for unit and acceptance tests.

The gradient-check instance lives here so the oracle is built exactly once
and both the unit test and the acceptance run use the same construction: a
small float64 pipeline, a fixed decode seed inside the loss closure, and a
hand-rolled central finite-difference sweep over every generator parameter.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from bdharden.backdoor import (
    LossWeights,
    PerturbationGenerator,
    combine,
    content_mse,
    neighborhood_smoothness,
    ssim_distance,
    stat_match_l1,
)
from bdharden.backdoor.normalize import batch_channel_stats
from bdharden.codec import build_codec_pair, collect_channel_stats
from bdharden.seeding import make_rng


def build_gradcheck_instance(seed: int = 0):
    """One-sample float64 loss closure plus the named generator parameters.

    Returns (closure, params) where closure() evaluates the full generation
    loss with a fixed decode seed, so repeated calls differ only through the
    parameters being perturbed.
    """
    width, image_size, ssim_window = 8, 12, 7
    clf, encoder, decoder = build_codec_pair(
        width=width,
        num_classes=4,
        image_size=image_size,
        truncate_after=1,
        scheme="gaussian",
        seed=seed,
    )
    rng = make_rng(seed + 100)
    pool = torch.rand((8, 3, image_size, image_size), generator=rng)
    decoder.set_stats(collect_channel_stats(encoder, pool))
    clf.double()
    decoder.double()

    x = (0.2 + 0.6 * torch.rand((1, 3, image_size, image_size), generator=rng)).double()
    ref_mean, ref_std = batch_channel_stats(x)
    gen = PerturbationGenerator.from_samples(
        x.float(), encoder.channels, grid=2, kernel_size=3,
        init_noise_std=1e-3, rng=rng,
    ).double()
    with torch.no_grad():
        # Move the alignment targets off the L1 kink at target == reference
        # so central differences see a smooth neighborhood.
        gen.align.target_mean += 0.03 * torch.randn(3, generator=rng).double()
        gen.align.target_std += 0.02 + 0.01 * torch.rand(3, generator=rng).double()

    weights = LossWeights()
    alpha = 0.5
    target = 2
    labels = torch.tensor([target], dtype=torch.long)
    decode_seed = 1234

    def closure() -> torch.Tensor:
        aligned = gen.align(x)
        feats, positions = encoder.encode_with_positions(aligned)
        transformed = gen.regional(feats)
        xhat = decoder.decode_image(
            transformed, rng=make_rng(decode_seed), positions=positions
        )
        ce = F.cross_entropy(clf(xhat), labels)
        content = content_mse(encoder(x), encoder(xhat))
        ssim_d = ssim_distance(x, xhat, window_size=ssim_window)
        smooth = neighborhood_smoothness(xhat)
        norm = stat_match_l1(
            gen.align.target_mean, gen.align.target_std, ref_mean, ref_std
        )
        return combine(ce, content, ssim_d, smooth, norm, weights, alpha)

    params = {
        "target_mean": gen.align.target_mean,
        "target_std": gen.align.target_std,
        "kernels": gen.regional.kernels,
    }
    return closure, params


def central_difference_check(closure, params, step: float = 1e-4):
    """Compare analytic gradients against central finite differences.

    Returns (max_rel_error, count) where the relative error of each entry is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-7) and count is the
    number of parameter entries swept.
    """
    for p in params.values():
        p.grad = None
    loss = closure()
    loss.backward()
    analytic = {name: p.grad.detach().clone() for name, p in params.items()}

    worst = 0.0
    count = 0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            grad = analytic[name].view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = closure().item()
                flat[i] = orig - step
                down = closure().item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * step)
                a = grad[i].item()
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-7)
                worst = max(worst, rel)
                count += 1
    return worst, count
