"""Pair scheduling: warm-up distance scan and most-vulnerable-pair selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from bdharden.backdoor.generator import GenConfig, GenerationError, generate_backdoor
from bdharden.codec.networks import Decoder, Encoder
from bdharden.distance.metric import feature_distance
from bdharden.modelops import frozen
from bdharden.seeding import make_rng, spawn_seed


@dataclass
class PairSchedule:
    """Estimated current distance per ordered class pair, plus update age."""

    scores: dict[tuple[int, int], float] = field(default_factory=dict)
    last_updated: dict[tuple[int, int], int] = field(default_factory=dict)

    def update(self, pair: tuple[int, int], score: float, round_index: int) -> None:
        if pair[0] == pair[1]:
            raise ValueError("schedule holds distinct ordered pairs only")
        self.scores[pair] = score
        self.last_updated[pair] = round_index

    def penalize(self, pair: tuple[int, int], round_index: int) -> None:
        """Push a pair to the back of the queue: worst current score + 1."""
        worst = max(self.scores.values(), default=0.0)
        self.update(pair, worst + 1.0, round_index)


def select_pair(schedule: PairSchedule) -> tuple[int, int]:
    """Ordered pair with the smallest estimated distance; ties go to the
    lowest (victim, target)."""
    if not schedule.scores:
        raise ValueError("schedule is empty")
    return min(schedule.scores, key=lambda p: (schedule.scores[p], p))


def class_samples(
    images: torch.Tensor,
    labels: torch.Tensor,
    cls: int,
    cap: int,
    seed: int,
) -> torch.Tensor:
    """Up to `cap` samples of one class, picked by a seeded permutation."""
    idx = (labels == cls).nonzero(as_tuple=True)[0]
    if idx.numel() == 0:
        raise ValueError(f"class {cls} absent from the provided data")
    if idx.numel() > cap:
        order = torch.randperm(idx.numel(), generator=make_rng(seed))
        idx = idx[order[:cap]]
    return images[idx]


def infer_num_classes(model: nn.Module, images: torch.Tensor) -> int:
    with frozen(model), torch.no_grad():
        return int(model(images[:1]).shape[1])


def warmup_scan(
    model: nn.Module,
    codecs: tuple[Encoder, Decoder],
    data: tuple[torch.Tensor, torch.Tensor],
    config,
) -> PairSchedule:
    """Cheap distance estimate for every ordered pair via short generations.

    Runs a regen_epochs-long generation per pair and scores it with the
    feature distance of the produced batch. regen_epochs=0 scores the plain
    identity generator (reconstruction distance), the cheapest baseline.
    Fully seeded: the same model, data, and config reproduce the scores.
    """
    encoder, decoder = codecs
    images, labels = data
    n = infer_num_classes(model, images)
    for cls in range(n):
        if not (labels == cls).any():
            raise ValueError(f"class {cls} absent from the provided data")
    rng = make_rng(config.seed)
    schedule = PairSchedule()
    for victim in range(n):
        for target in range(n):
            if victim == target:
                continue
            pair_seed = spawn_seed(rng)
            samples = class_samples(
                images, labels, victim, config.gen_samples, pair_seed
            )
            gen_config = GenConfig(
                epochs=config.regen_epochs,
                batch_size=config.batch_size,
                flip_threshold=config.flip_threshold,
                init_noise_std=0.0 if config.regen_epochs == 0 else 1e-3,
                seed=pair_seed,
            )
            try:
                result = generate_backdoor(
                    model, encoder, decoder, samples, target,
                    config=gen_config, victim=victim,
                )
            except GenerationError:
                schedule.penalize((victim, target), -1)
                continue
            score = feature_distance(encoder, samples, result.backdoor_batch)
            schedule.update((victim, target), score, -1)
    return schedule
