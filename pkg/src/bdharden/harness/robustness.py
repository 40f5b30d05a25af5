"""Robust-accuracy evaluation and the finetuning comparison baseline."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..attacks.pgd import pgd_attack
from ..imageops import minibatch_indices, random_crop_flip
from ..seeding import make_rng

PGD_EPS = 8 / 255
PGD_STEPS = 10


@torch.no_grad()
def _accuracy(model: nn.Module, images: torch.Tensor, labels: torch.Tensor) -> float:
    was_training = model.training
    model.eval()
    correct = 0
    for idx in minibatch_indices(images.shape[0], 512):
        correct += int((model(images[idx]).argmax(dim=1) == labels[idx]).sum())
    if was_training:
        model.train()
    return correct / images.shape[0]


def pgd_eval(
    model: nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    eps: float = PGD_EPS,
    steps: int = PGD_STEPS,
    step_size: float | None = None,
    seed: int = 0,
    batch_size: int = 256,
) -> float:
    """Robust accuracy: fraction still correctly classified under PGD.

    eps=0 degenerates to the clean accuracy (zero-radius attack). One random
    start, step size eps/4 unless overridden.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if eps == 0:
        return _accuracy(model, images, labels)
    adv = pgd_attack(
        model, images, labels, eps,
        steps=steps, step_size=step_size, seed=seed, batch_size=batch_size,
    )
    return _accuracy(model, adv, labels)


@dataclass
class FinetuneConfig:
    epochs: int = 10
    batch_size: int = 128
    lr: float = 1e-4
    momentum: float = 0.9
    augment: bool = True
    seed: int = 0


def finetune_baseline(
    model: nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    config: FinetuneConfig | None = None,
) -> nn.Module:
    """Standard finetuning on a small clean subset, with random crops and
    horizontal flips. Returns a new model; the input is left untouched.
    Learning rate 0 returns an exact copy (no optimizer or norm-statistic
    updates run at all)."""
    config = config or FinetuneConfig()
    tuned = copy.deepcopy(model)
    if config.lr == 0 or config.epochs == 0:
        return tuned
    rng = make_rng(config.seed)
    opt = torch.optim.SGD(tuned.parameters(), lr=config.lr, momentum=config.momentum)
    tuned.train()
    for _ in range(config.epochs):
        for idx in minibatch_indices(images.shape[0], config.batch_size, rng):
            x = images[idx]
            if config.augment:
                x = random_crop_flip(x, rng)
            loss = F.cross_entropy(tuned(x), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    tuned.eval()
    return tuned
