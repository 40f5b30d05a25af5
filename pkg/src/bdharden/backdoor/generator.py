"""Backdoor generator: optimization loop over the alignment + regional layers.

The trainable transformation is

    x -> ChannelAlign -> encoder -> RegionalConv -> decoder -> clamp [0,1]

and the objective pushes the subject model toward a target label while the
quality terms keep the output close to the input (feature content, SSIM,
smoothness) and keep the alignment targets near the generation set's own
statistics. The subject model and the codec stay frozen throughout; only the
alignment targets and the regional kernels receive gradients.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from bdharden.codec.checkpoint import load_checkpoint, save_checkpoint
from bdharden.codec.networks import Decoder, Encoder
from bdharden.imageops import minibatch_indices
from bdharden.modelops import frozen
from bdharden.seeding import make_rng, spawn_seed
from .losses import (
    AdaptiveWeight,
    LossWeights,
    combine,
    content_mse,
    neighborhood_smoothness,
    stat_match_l1,
)
from .normalize import ChannelAlign, batch_channel_stats
from .regional import RegionalConv
from .ssim import ssim_distance

TRACE_COLUMNS = (
    "epoch",
    "loss_ce",
    "loss_content",
    "loss_ssim_dist",
    "loss_smooth",
    "loss_norm",
    "alpha",
    "flip_rate",
)


class GenerationError(RuntimeError):
    """Raised when the optimization diverges twice (initial run + one restart)."""


class PerturbationGenerator(nn.Module):
    """Trainable input transformation: channel alignment plus regional kernels."""

    def __init__(
        self,
        feature_channels: int,
        target_mean: torch.Tensor,
        target_std: torch.Tensor,
        grid: int = 2,
        kernel_size: int = 3,
        init_noise_std: float = 1e-3,
        rng: torch.Generator | None = None,
    ):
        super().__init__()
        self.align = ChannelAlign(target_mean, target_std)
        self.regional = RegionalConv(
            feature_channels,
            grid=grid,
            kernel_size=kernel_size,
            init_noise_std=init_noise_std,
            rng=rng,
        )

    @classmethod
    def from_samples(
        cls,
        samples: torch.Tensor,
        feature_channels: int,
        grid: int = 2,
        kernel_size: int = 3,
        init_noise_std: float = 1e-3,
        rng: torch.Generator | None = None,
    ) -> "PerturbationGenerator":
        """Identity-leaning init: alignment targets = batch stats of `samples`."""
        mean, std = batch_channel_stats(samples)
        return cls(
            feature_channels,
            mean,
            std.clamp_min(1e-6),
            grid=grid,
            kernel_size=kernel_size,
            init_noise_std=init_noise_std,
            rng=rng,
        )

    def synthesize(
        self,
        x: torch.Tensor,
        encoder: Encoder,
        decoder: Decoder,
        rng: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Full pipeline producing clamped [0,1] backdoor images."""
        aligned = self.align(x)
        feats, positions = encoder.encode_with_positions(aligned)
        transformed = self.regional(feats)
        return decoder.decode_image(transformed, rng=rng, positions=positions)

    def arch(self) -> dict:
        return {
            "image_channels": int(self.align.target_mean.shape[0]),
            "feature_channels": self.regional.channels,
            "grid": self.regional.grid,
            "kernel_size": self.regional.kernel_size,
        }


@dataclass
class GenConfig:
    """Knobs for one backdoor generation run."""

    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-2
    flip_threshold: float = 0.9
    grid: int = 2
    kernel_size: int = 3
    init_noise_std: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    alpha_init: float = 1e-3
    alpha_factor: float = 1.5
    alpha_patience: int = 5
    alpha_min: float = 1e-5
    alpha_max: float = 1e2
    ssim_window: int = 11
    sigma_floor: float = 1e-4
    seed: int = 0
    stop_flip: float | None = None


@dataclass
class GenResult:
    """Outcome of a generation run.

    The generator carries the returned parameter state: the best epoch's
    snapshot when any epoch reached the flip threshold (smallest feature gap
    among those), otherwise the final state. flip_rate, content_distance and
    backdoor_batch all describe that same state, evaluated on the full
    generation set with the run's fixed evaluation seed.
    """

    generator: PerturbationGenerator
    converged: bool
    flip_rate: float
    content_distance: float
    epochs_used: int
    backdoor_batch: torch.Tensor
    trace: list[dict]
    target: int
    victim: int | None = None
    best_epoch: int | None = None
    best_flip: float = 0.0
    restarted: bool = False


class _DivergedLoss(RuntimeError):
    """Internal: a non-finite loss ended the current optimization attempt."""


@torch.no_grad()
def _evaluate(
    generator: PerturbationGenerator,
    model: nn.Module,
    encoder: Encoder,
    decoder: Decoder,
    samples: torch.Tensor,
    target: int,
    eval_seed: int,
    batch_size: int,
    return_batch: bool = False,
) -> tuple[float, float, torch.Tensor | None]:
    """Flip rate and float64 mean feature-MSE on the full generation set.

    Decoding noise comes from a generator seeded with `eval_seed`, so repeated
    evaluations of the same parameters are bit-identical.
    """
    rng = make_rng(eval_seed)
    flips = 0
    gap_sum = 0.0
    chunks: list[torch.Tensor] = []
    for idx in minibatch_indices(samples.shape[0], batch_size):
        x = samples[idx]
        xhat = generator.synthesize(x, encoder, decoder, rng=rng)
        preds = model(xhat).argmax(dim=1)
        flips += int((preds == target).sum().item())
        gap = F.mse_loss(
            encoder(xhat).double(), encoder(x).double(), reduction="none"
        )
        gap_sum += float(gap.mean(dim=(1, 2, 3)).sum().item())
        if return_batch:
            chunks.append(xhat)
    n = samples.shape[0]
    batch = torch.cat(chunks) if return_batch else None
    return flips / n, gap_sum / n, batch


def generate_backdoor(
    model: nn.Module,
    encoder: Encoder,
    decoder: Decoder,
    samples: torch.Tensor,
    target: int,
    config: GenConfig | None = None,
    victim: int | None = None,
    warm_start: PerturbationGenerator | None = None,
) -> GenResult:
    """Optimize a backdoor transformation that flips `samples` to `target`.

    Victim-specific runs pass samples from one class (and optionally the
    class id for bookkeeping); universal runs pass a class mix. A non-finite
    loss restarts the run once from a fresh initialization at a tenth of the
    learning rate; a second divergence raises GenerationError. The subject
    model's weights are never touched.

    `warm_start` copies an existing generator's parameters as the starting
    point (divergence restarts still fall back to a fresh initialization).
    """
    if config is None:
        config = GenConfig()
    if samples.dim() != 4 or samples.shape[0] == 0:
        raise ValueError("samples must be a non-empty (B, C, H, W) batch")
    if config.epochs < 0:
        raise ValueError("epochs must be >= 0")

    rng = make_rng(config.seed)
    eval_seed = spawn_seed(rng)
    with frozen(model):
        attempt = 0
        lr = config.lr
        while True:
            init_rng = make_rng(spawn_seed(rng))
            generator = PerturbationGenerator.from_samples(
                samples,
                encoder.channels,
                grid=config.grid,
                kernel_size=config.kernel_size,
                init_noise_std=config.init_noise_std,
                rng=init_rng,
            )
            if warm_start is not None and attempt == 0:
                generator.load_state_dict(warm_start.state_dict())
            try:
                result = _optimize(
                    generator, model, encoder, decoder, samples, target,
                    config, lr, rng, eval_seed,
                )
                result.victim = victim
                result.restarted = attempt > 0
                return result
            except _DivergedLoss:
                attempt += 1
                if attempt > 1:
                    raise GenerationError(
                        "generation loss diverged twice (initial run and the "
                        "reduced-rate restart)"
                    )
                lr = config.lr / 10.0


def _optimize(
    generator: PerturbationGenerator,
    model: nn.Module,
    encoder: Encoder,
    decoder: Decoder,
    samples: torch.Tensor,
    target: int,
    config: GenConfig,
    lr: float,
    rng: torch.Generator,
    eval_seed: int,
) -> GenResult:
    n = samples.shape[0]
    alpha = AdaptiveWeight(
        value=config.alpha_init,
        factor=config.alpha_factor,
        patience=config.alpha_patience,
        threshold=config.flip_threshold,
        min_value=config.alpha_min,
        max_value=config.alpha_max,
    )
    # Reference statistics for the alignment regularizer are fixed by the
    # generation set, not recomputed per minibatch.
    ref_mean, ref_std = batch_channel_stats(samples)
    optimizer = torch.optim.Adam(generator.parameters(), lr=lr)
    labels = torch.full((n,), target, dtype=torch.long)

    trace: list[dict] = []
    best_state: dict | None = None
    best_gap = float("inf")
    best_epoch: int | None = None
    best_flip = 0.0
    epochs_used = 0

    for epoch in range(config.epochs):
        sums = {k: 0.0 for k in TRACE_COLUMNS[1:6]}
        batches = 0
        alpha_used = alpha.value
        for idx in minibatch_indices(n, config.batch_size, rng):
            x = samples[idx]
            xhat = generator.synthesize(x, encoder, decoder, rng=rng)
            logits = model(xhat)
            ce = F.cross_entropy(logits, labels[: x.shape[0]])
            content = content_mse(encoder(x), encoder(xhat))
            ssim_d = ssim_distance(x, xhat, window_size=config.ssim_window)
            smooth = neighborhood_smoothness(xhat)
            norm = stat_match_l1(
                generator.align.target_mean,
                generator.align.target_std,
                ref_mean,
                ref_std,
            )
            total = combine(
                ce, content, ssim_d, smooth, norm, config.weights, alpha.value
            )
            if not torch.isfinite(total):
                raise _DivergedLoss
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            generator.align.project_(floor=config.sigma_floor)
            sums["loss_ce"] += float(ce.item())
            sums["loss_content"] += float(content.item())
            sums["loss_ssim_dist"] += float(ssim_d.item())
            sums["loss_smooth"] += float(smooth.item())
            sums["loss_norm"] += float(norm.item())
            batches += 1

        flip, gap, _ = _evaluate(
            generator, model, encoder, decoder, samples, target,
            eval_seed, config.batch_size,
        )
        alpha.update(flip)
        row = {k: v / batches for k, v in sums.items()}
        row.update(epoch=epoch, alpha=alpha_used, flip_rate=flip)
        trace.append(row)
        epochs_used = epoch + 1
        best_flip = max(best_flip, flip)
        if flip >= config.flip_threshold and gap < best_gap:
            best_state = copy.deepcopy(generator.state_dict())
            best_gap = gap
            best_epoch = epoch
        if config.stop_flip is not None and flip >= config.stop_flip:
            break

    if best_state is not None:
        generator.load_state_dict(best_state)
    flip, gap, batch = _evaluate(
        generator, model, encoder, decoder, samples, target,
        eval_seed, config.batch_size, return_batch=True,
    )
    return GenResult(
        generator=generator,
        converged=best_state is not None,
        flip_rate=flip,
        content_distance=gap,
        epochs_used=epochs_used,
        backdoor_batch=batch,
        trace=trace,
        target=target,
        best_epoch=best_epoch,
        best_flip=max(best_flip, flip),
    )


def write_trace(path: str | Path, trace: list[dict]) -> None:
    """Loss history as CSV, one row per epoch."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: row[k] for k in TRACE_COLUMNS})


def read_trace(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {k: float(v) for k, v in row.items()}
        parsed["epoch"] = int(parsed["epoch"])
        out.append(parsed)
    return out


def save_generator(path: str | Path, result: GenResult) -> None:
    """Persist a generator checkpoint with its run metadata."""
    meta = dict(result.generator.arch())
    meta.update(
        target=result.target,
        victim=result.victim,
        flip_rate=result.flip_rate,
        content_distance=result.content_distance,
        converged=result.converged,
    )
    save_checkpoint(path, result.generator, kind="generator", meta=meta)


def load_generator(path: str | Path) -> tuple[PerturbationGenerator, dict]:
    """Rebuild a generator from a checkpoint; returns (module, metadata)."""
    from bdharden.codec.checkpoint import read_manifest

    meta = read_manifest(path)["meta"]
    c = meta["image_channels"]
    generator = PerturbationGenerator(
        meta["feature_channels"],
        torch.zeros(c),
        torch.ones(c),
        grid=meta["grid"],
        kernel_size=meta["kernel_size"],
        init_noise_std=0.0,
    )
    load_checkpoint(path, generator, kind="generator")
    return generator, meta
