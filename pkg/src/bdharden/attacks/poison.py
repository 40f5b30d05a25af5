"""Dataset poisoning: spec, index selection, materialization, ASR eval.

Poisoned datasets are defined by (base data, spec, selection seed) and can be
regenerated from those three; only that triple is ever persisted. Dirty-label
families draw victims from outside the target class and relabel them; clean-
label families perturb target-class samples and keep their labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import torch
from torch import nn

from bdharden.imageops import minibatch_indices
from bdharden.seeding import make_rng, tensor_hash
from .pgd import pgd_attack
from .triggers import (
    FILTER_IDS,
    blend_trigger,
    filter_trigger,
    make_blend_pattern,
    make_warp_field,
    sig_trigger,
    warp_image,
)

FAMILIES = ("blend", "sig", "filter", "wanet", "cleanlabel")
LABEL_MODES = ("dirty", "clean")

GRID_SIZE = 2
_GRID = torch.tensor([[1.0, 0.0], [0.0, 1.0]])


@dataclass
class PoisonSpec:
    """One attack setup: family, its parameters, and the labeling rule."""

    family: str
    target: int
    poison_rate: float
    label_mode: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected {FAMILIES}")
        if self.label_mode not in LABEL_MODES:
            raise ValueError(f"label_mode must be one of {LABEL_MODES}")
        if not 0.0 <= self.poison_rate <= 1.0:
            raise ValueError("poison_rate must lie in [0, 1]")
        if self.target < 0:
            raise ValueError("target must be a valid label")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "target": self.target,
            "poison_rate": self.poison_rate,
            "label_mode": self.label_mode,
            "params": dict(self.params),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoisonSpec":
        return cls(
            family=d["family"],
            target=int(d["target"]),
            poison_rate=float(d["poison_rate"]),
            label_mode=d["label_mode"],
            params=dict(d.get("params", {})),
            seed=int(d.get("seed", 0)),
        )


def default_spec(family: str, target: int = 0, seed: int = 0) -> PoisonSpec:
    """Reference setups: rates, ratios, and label modes per family."""
    table = {
        "blend": (0.10, "dirty", {"alpha": 0.2}),
        "sig": (0.08, "clean", {"delta": 20.0, "freq": 6.0}),
        "filter": (0.10, "dirty", {"filter_id": FILTER_IDS[0]}),
        "wanet": (0.10, "dirty", {"grid_k": 4, "strength": 0.5}),
        "cleanlabel": (0.50, "clean", {"eps": 8.0 / 255.0, "steps": 10}),
    }
    if family not in table:
        raise ValueError(f"unknown family {family!r}, expected {FAMILIES}")
    rate, mode, params = table[family]
    return PoisonSpec(
        family=family, target=target, poison_rate=rate,
        label_mode=mode, params=params, seed=seed,
    )


def stamp_grid(x: torch.Tensor) -> torch.Tensor:
    """Overwrite the 2x2 checkerboard at the top-left corner, all channels."""
    out = x.clone()
    out[..., :GRID_SIZE, :GRID_SIZE] = _GRID.to(x.dtype)
    return out


def build_trigger(
    spec: PoisonSpec, image_size: int
) -> Callable[[torch.Tensor], torch.Tensor]:
    """Trigger as applied at evaluation time, fixed by the spec.

    For cleanlabel the test-time trigger is the corner grid alone; the PGD
    perturbation exists only to poison training samples.
    """
    if spec.family == "blend":
        pattern = make_blend_pattern((3, image_size, image_size), spec.seed)
        alpha = float(spec.params.get("alpha", 0.2))
        return lambda x: blend_trigger(x, pattern, alpha)
    if spec.family == "sig":
        delta = float(spec.params.get("delta", 20.0))
        freq = float(spec.params.get("freq", 6.0))
        return lambda x: sig_trigger(x, delta, freq)
    if spec.family == "filter":
        filter_id = spec.params.get("filter_id", FILTER_IDS[0])
        return lambda x: filter_trigger(x, filter_id)
    if spec.family == "wanet":
        strength = float(spec.params.get("strength", 0.5))
        grid_k = int(spec.params.get("grid_k", 4))
        if strength == 0:
            return lambda x: x.clone()
        fieldmap = make_warp_field(image_size, grid_k, strength, spec.seed)
        return lambda x: warp_image(x, fieldmap)
    return stamp_grid


@dataclass
class PoisonedDataset:
    """Base data plus a poisoned index set and the trigger that marks them."""

    images: torch.Tensor
    labels: torch.Tensor
    indices: torch.Tensor
    spec: PoisonSpec
    trigger: Callable[[torch.Tensor], torch.Tensor]
    selection_seed: int
    override_images: torch.Tensor | None = None

    def apply(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Materialize the poisoned training set (copies, base untouched)."""
        images = self.images.clone()
        labels = self.labels.clone()
        if self.indices.numel():
            if self.override_images is not None:
                images[self.indices] = self.override_images
            else:
                images[self.indices] = self.trigger(images[self.indices])
            if self.spec.label_mode == "dirty":
                labels[self.indices] = self.spec.target
        return images, labels

    def manifest(self) -> dict:
        """What persists: enough to regenerate, never the samples."""
        return {
            "base_hash": tensor_hash(self.images, self.labels),
            "spec": self.spec.to_dict(),
            "selection_seed": self.selection_seed,
            "poisoned_count": int(self.indices.numel()),
        }


def eligible_indices(labels: torch.Tensor, spec: PoisonSpec) -> torch.Tensor:
    """Dirty-label: everything outside the target class; clean-label: the
    target class itself."""
    if spec.label_mode == "dirty":
        mask = labels != spec.target
    else:
        mask = labels == spec.target
    return mask.nonzero(as_tuple=True)[0]


def select_poison_indices(
    labels: torch.Tensor, spec: PoisonSpec, seed: int
) -> torch.Tensor:
    """Seeded sample of round(rate * pool) indices from the eligible pool."""
    pool = eligible_indices(labels, spec)
    count = round(spec.poison_rate * pool.numel())
    if count == 0:
        return torch.empty(0, dtype=torch.long)
    if pool.numel() == 0:
        raise ValueError(
            f"no eligible samples for family {spec.family!r} with "
            f"label_mode {spec.label_mode!r} and target {spec.target}"
        )
    order = torch.randperm(pool.numel(), generator=make_rng(seed))
    return pool[order[:count]].sort().values


def poison(
    images: torch.Tensor,
    labels: torch.Tensor,
    spec: PoisonSpec,
    seed: int,
    model_for_perturb: nn.Module | None = None,
) -> PoisonedDataset:
    """Poisoned dataset under a deterministic, seed-driven selection.

    cleanlabel requires `model_for_perturb` (the PGD surrogate) and is
    delegated to cleanlabel_poison.
    """
    if spec.family == "cleanlabel":
        if model_for_perturb is None:
            raise ValueError("cleanlabel poisoning needs model_for_perturb")
        return cleanlabel_poison(images, labels, model_for_perturb, spec, seed)
    indices = select_poison_indices(labels, spec, seed)
    trigger = build_trigger(spec, images.shape[-1])
    return PoisonedDataset(
        images=images, labels=labels, indices=indices,
        spec=spec, trigger=trigger, selection_seed=seed,
    )


def cleanlabel_poison(
    images: torch.Tensor,
    labels: torch.Tensor,
    model_for_perturb: nn.Module,
    spec: PoisonSpec,
    seed: int = 0,
) -> PoisonedDataset:
    """Adversarially perturb target-class samples, then stamp the grid.

    The perturbation is untargeted PGD against the surrogate within an
    L-infinity ball (eps from the spec, 8/255 by default); labels stay
    unchanged. The stored poisoned images carry both the perturbation and
    the corner grid.
    """
    if spec.label_mode != "clean":
        raise ValueError("cleanlabel poisoning keeps labels; use label_mode clean")
    indices = select_poison_indices(labels, spec, seed)
    trigger = build_trigger(spec, images.shape[-1])
    override = None
    if indices.numel():
        eps = float(spec.params.get("eps", 8.0 / 255.0))
        steps = int(spec.params.get("steps", 10))
        adv = pgd_attack(
            model_for_perturb, images[indices], labels[indices],
            eps=eps, steps=steps, seed=seed,
        )
        override = stamp_grid(adv)
    return PoisonedDataset(
        images=images, labels=labels, indices=indices,
        spec=spec, trigger=trigger, selection_seed=seed,
        override_images=override,
    )


@torch.no_grad()
def eval_asr(
    model: nn.Module,
    test_images: torch.Tensor,
    test_labels: torch.Tensor,
    spec: PoisonSpec,
    batch_size: int = 256,
) -> float:
    """Fraction of triggered non-target test samples predicted as the target."""
    mask = test_labels != spec.target
    images = test_images[mask]
    if images.shape[0] == 0:
        raise ValueError("test set contains only target-class samples")
    trigger = build_trigger(spec, images.shape[-1])
    was_training = model.training
    model.eval()
    hits = 0
    for idx in minibatch_indices(images.shape[0], batch_size):
        preds = model(trigger(images[idx])).argmax(dim=1)
        hits += int((preds == spec.target).sum().item())
    model.train(was_training)
    return hits / images.shape[0]
