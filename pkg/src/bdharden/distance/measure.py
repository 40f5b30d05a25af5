"""Per-pair distance measurement through repeated backdoor generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from bdharden.backdoor.generator import GenConfig, GenerationError, generate_backdoor
from bdharden.codec.networks import Decoder, Encoder
from bdharden.seeding import make_rng
from .metric import DistanceMatrix, PairMeasurement, feature_distance


@dataclass
class MeasurementProtocol:
    """How a single class pair is measured.

    Each trial optimizes a fresh generator on the same victim sample subset;
    a trial succeeds when it reaches flip_threshold within its epochs. The
    pair's distance is the minimum over successful trials. `seeds` drive the
    trials and must match `trials` in length (defaults to 0..trials-1).
    """

    samples_per_pair: int = 100
    epochs: int = 300
    flip_threshold: float = 0.9
    trials: int = 3
    seeds: list[int] = field(default_factory=list)
    batch_size: int = 32
    grid: int = 2
    kernel_size: int = 3
    lr: float = 1e-2

    def __post_init__(self):
        if not self.seeds:
            self.seeds = list(range(self.trials))
        if len(self.seeds) != self.trials:
            raise ValueError(
                f"{self.trials} trials need {self.trials} seeds, "
                f"got {len(self.seeds)}"
            )
        if self.samples_per_pair < 1 or self.epochs < 0 or self.trials < 1:
            raise ValueError("protocol sizes must be positive")

    def gen_config(self, seed: int) -> GenConfig:
        return GenConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            flip_threshold=self.flip_threshold,
            grid=self.grid,
            kernel_size=self.kernel_size,
            seed=seed,
        )


def select_victim_samples(
    images: torch.Tensor,
    labels: torch.Tensor,
    victim: int,
    target: int,
    protocol: MeasurementProtocol,
) -> torch.Tensor:
    """Seeded victim-class subset; the selection depends only on the pair
    and the protocol's first seed, so every trial sees the same samples."""
    idx = (labels == victim).nonzero(as_tuple=True)[0]
    if idx.numel() < protocol.samples_per_pair:
        raise ValueError(
            f"class {victim} has {idx.numel()} samples, protocol needs "
            f"{protocol.samples_per_pair}"
        )
    sel_seed = (protocol.seeds[0] * 1_000_003 + victim * 1009 + target) & 0x7FFFFFFF
    order = torch.randperm(idx.numel(), generator=make_rng(sel_seed))
    return images[idx[order[: protocol.samples_per_pair]]]


def measure_pair_distance(
    model: torch.nn.Module,
    victim: int,
    target: int,
    protocol: MeasurementProtocol,
    codecs: tuple[Encoder, Decoder],
    data: tuple[torch.Tensor, torch.Tensor],
) -> tuple[float, PairMeasurement]:
    """Class distance for one ordered pair: min feature gap over trials.

    Runs `trials` independent generation attempts. Successful trials (flip
    threshold reached) report the feature distance of their best snapshot;
    the pair distance is the smallest of those. When no trial converges the
    pair is flagged and the largest observed distance is reported instead.
    """
    encoder, decoder = codecs
    images, labels = data
    samples = select_victim_samples(images, labels, victim, target, protocol)

    best: tuple[float, float] | None = None
    worst: tuple[float, float] | None = None
    for seed in protocol.seeds:
        try:
            result = generate_backdoor(
                model, encoder, decoder, samples, target,
                config=protocol.gen_config(seed), victim=victim,
            )
        except GenerationError:
            continue
        dist = feature_distance(encoder, samples, result.backdoor_batch)
        if result.converged:
            if best is None or dist < best[0]:
                best = (dist, result.flip_rate)
        if worst is None or dist > worst[0]:
            worst = (dist, result.flip_rate)

    if best is not None:
        dist, flip = best
        converged = True
    elif worst is not None:
        dist, flip = worst
        converged = False
    else:
        # every trial aborted before producing a generator
        dist, flip, converged = 0.0, 0.0, False
    meta = PairMeasurement(
        victim=victim,
        target=target,
        distance=dist,
        flip_rate=flip,
        converged=converged,
        seeds=list(protocol.seeds),
    )
    return dist, meta


def all_ordered_pairs(n_classes: int) -> list[tuple[int, int]]:
    return [
        (v, t) for v in range(n_classes) for t in range(n_classes) if v != t
    ]


def sample_pairs(n_classes: int, k: int, seed: int = 0) -> list[tuple[int, int]]:
    """Reproducible subset of ordered pairs for many-class models.

    The full ordered-pair list in (victim, target) order is shuffled with a
    generator seeded by `seed` and truncated to k entries; the same
    (n_classes, k, seed) always yields the same pairs.
    """
    pairs = all_ordered_pairs(n_classes)
    if k >= len(pairs):
        return pairs
    order = torch.randperm(len(pairs), generator=make_rng(seed))
    return [pairs[int(i)] for i in order[:k]]


def measure_matrix(
    model: torch.nn.Module,
    n_classes: int,
    protocol: MeasurementProtocol,
    codecs: tuple[Encoder, Decoder],
    data: tuple[torch.Tensor, torch.Tensor],
    pairs: list[tuple[int, int]] | None = None,
    progress=None,
) -> DistanceMatrix:
    """Measure a set of ordered pairs (all of them by default)."""
    matrix = DistanceMatrix(n=n_classes)
    for victim, target in pairs if pairs is not None else all_ordered_pairs(n_classes):
        _, meta = measure_pair_distance(
            model, victim, target, protocol, codecs, data
        )
        matrix.add(meta)
        if progress is not None:
            progress(meta)
    return matrix
