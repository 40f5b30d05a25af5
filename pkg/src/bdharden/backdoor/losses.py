"""Loss terms and the adaptive misclassification/quality balance.

The generator's objective is

    ce + alpha * (content_weight * content
                  + ssim_weight * ssim_distance
                  + smooth_weight * smoothness
                  + stat_match)

where alpha is re-balanced from the flip rate once per epoch: a sustained run
of epochs at or above the flip threshold raises alpha (care more about image
quality), any miss lowers it immediately (care more about flipping).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F


def neighborhood_smoothness(x: torch.Tensor, window: int = 3) -> torch.Tensor:
    """MSE between an image batch and its local neighborhood average.

    Stride-1 average pooling with padding; border averages use only the
    pixels actually present. Constant images score 0 up to float rounding.
    """
    if window % 2 != 1:
        raise ValueError("window must be odd")
    blurred = F.avg_pool2d(
        x, window, stride=1, padding=window // 2, count_include_pad=False
    )
    return F.mse_loss(x, blurred)


def stat_match_l1(
    target_mean: torch.Tensor,
    target_std: torch.Tensor,
    ref_mean: torch.Tensor,
    ref_std: torch.Tensor,
) -> torch.Tensor:
    """Channel-averaged L1 gap between alignment targets and reference stats."""
    return (target_mean - ref_mean).abs().mean() + (
        target_std - ref_std
    ).abs().mean()


def content_mse(a: torch.Tensor, a_hat: torch.Tensor) -> torch.Tensor:
    """Feature-space MSE between clean and perturbed encoder activations."""
    return F.mse_loss(a_hat, a)


@dataclass
class AdaptiveWeight:
    """Flip-rate-driven multiplier for the quality terms.

    `update` applies one monotone step per call: `patience` consecutive
    flip rates at or above `threshold` start raising the value by `factor`
    (every further successful call keeps raising it, capped at `max_value`);
    a single miss resets the streak and divides by `factor` immediately
    (floored at `min_value`).
    """

    value: float = 1e-3
    factor: float = 1.5
    patience: int = 5
    threshold: float = 0.9
    min_value: float = 1e-5
    max_value: float = 1e2
    streak: int = field(default=0, repr=False)

    def update(self, flip_rate: float) -> float:
        if flip_rate >= self.threshold:
            self.streak += 1
            if self.streak >= self.patience:
                self.value = min(self.value * self.factor, self.max_value)
        else:
            self.streak = 0
            self.value = max(self.value / self.factor, self.min_value)
        return self.value


@dataclass
class LossWeights:
    """Fixed multipliers for the quality terms."""

    content: float = 0.001
    ssim: float = 100.0
    smooth: float = 0.05


@dataclass
class LossTerms:
    """One evaluation of every term, pre-weighting, as floats."""

    ce: float
    content: float
    ssim_dist: float
    smooth: float
    stat_match: float

    def total(self, weights: LossWeights, alpha: float) -> float:
        return self.ce + alpha * (
            weights.content * self.content
            + weights.ssim * self.ssim_dist
            + weights.smooth * self.smooth
            + self.stat_match
        )


def combine(
    ce: torch.Tensor,
    content: torch.Tensor,
    ssim_dist: torch.Tensor,
    smooth: torch.Tensor,
    stat_match: torch.Tensor,
    weights: LossWeights,
    alpha: float,
) -> torch.Tensor:
    """Differentiable total loss; `alpha` enters as a constant."""
    return ce + alpha * (
        weights.content * content
        + weights.ssim * ssim_dist
        + weights.smooth * smooth
        + stat_match
    )
