"""Subject-model zoo and seeded training.

Three small architectures, each under a million parameters so every
experiment stays desk-scale: a plain convnet, a residual stack, and a thin
VGG-style column.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..imageops import minibatch_indices, random_crop_flip
from ..seeding import make_rng, seed_everything
from .data import ImageDataset
from ..codec.training import classifier_accuracy

ARCHS = ("small-cnn", "resnet20-like", "vgg13-like")
MAX_PARAMS = 1_000_000


class TrainingDivergence(RuntimeError):
    """Subject-model training hit a non-finite loss and was aborted."""


def _conv_bn(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class SmallCNN(nn.Module):
    def __init__(self, n_classes: int, image_size: int = 32):
        super().__init__()
        self.features = nn.Sequential(
            _conv_bn(3, 32), _conv_bn(32, 32), nn.MaxPool2d(2),
            _conv_bn(32, 64), nn.MaxPool2d(2),
            _conv_bn(64, 64), nn.MaxPool2d(2),
        )
        side = image_size // 8
        self.classifier = nn.Linear(64 * side * side, n_classes)

    def forward(self, x):
        return self.classifier(torch.flatten(self.features(x), 1))


class _ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet20Like(nn.Module):
    def __init__(self, n_classes: int, image_size: int = 32):
        super().__init__()
        self.stem = _conv_bn(3, 16)
        stages = []
        cin = 16
        for cout, stride in ((16, 1), (32, 2), (64, 2)):
            blocks = [_ResidualBlock(cin, cout, stride)]
            blocks += [_ResidualBlock(cout, cout) for _ in range(2)]
            stages.append(nn.Sequential(*blocks))
            cin = cout
        self.stages = nn.Sequential(*stages)
        self.head = nn.Linear(64, n_classes)

    def forward(self, x):
        out = self.stages(self.stem(x))
        out = F.adaptive_avg_pool2d(out, 1).flatten(1)
        return self.head(out)


class VGG13Like(nn.Module):
    def __init__(self, n_classes: int, image_size: int = 32):
        super().__init__()
        layers: list[nn.Module] = []
        cin = 3
        for block in ((32, 32), (64, 64), (128, 128), (128, 128)):
            for cout in block:
                layers.append(_conv_bn(cin, cout))
                cin = cout
            layers.append(nn.MaxPool2d(2))
        self.features = nn.Sequential(*layers)
        side = image_size // 16
        self.classifier = nn.Sequential(
            nn.Linear(128 * side * side, 128),
            nn.ReLU(inplace=True),
            nn.Linear(128, n_classes),
        )

    def forward(self, x):
        return self.classifier(torch.flatten(self.features(x), 1))


def build_model(arch: str, n_classes: int, image_size: int = 32, seed: int = 0) -> nn.Module:
    """Seeded construction of one zoo architecture."""
    if arch not in ARCHS:
        raise ValueError(f"unknown architecture {arch!r}, expected one of {ARCHS}")
    seed_everything(seed)
    if arch == "small-cnn":
        model = SmallCNN(n_classes, image_size)
    elif arch == "resnet20-like":
        model = ResNet20Like(n_classes, image_size)
    else:
        model = VGG13Like(n_classes, image_size)
    params = sum(p.numel() for p in model.parameters())
    if params > MAX_PARAMS:
        raise ValueError(f"{arch} has {params} parameters, budget is {MAX_PARAMS}")
    return model


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 1e-3
    augment: bool = True
    seed: int = 0


@dataclass
class TrainResult:
    arch: str
    accuracy: float
    wall_clock_seconds: float
    epochs: int
    params: int
    history: list[dict] = field(default_factory=list)


def train_model(
    arch: str,
    dataset: ImageDataset,
    config: TrainConfig | None = None,
    train_data: tuple[torch.Tensor, torch.Tensor] | None = None,
    model: nn.Module | None = None,
) -> tuple[nn.Module, TrainResult]:
    """Train one zoo model; returns it with its recorded test accuracy.

    `train_data` overrides the dataset's train split (poisoned sets go in
    here); `model` skips construction to continue training existing weights.
    A non-finite batch loss aborts with TrainingDivergence.
    """
    config = config or TrainConfig()
    images, labels = train_data if train_data is not None else dataset.train
    if model is None:
        model = build_model(arch, dataset.n_classes, dataset.image_size, config.seed)
    rng = make_rng(config.seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    start = time.time()
    history: list[dict] = []
    model.train()
    for epoch in range(config.epochs):
        total, batches = 0.0, 0
        for idx in minibatch_indices(images.shape[0], config.batch_size, rng):
            x = images[idx]
            if config.augment:
                x = random_crop_flip(x, rng)
            loss = F.cross_entropy(model(x), labels[idx])
            if not math.isfinite(loss.item()):
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch}, batch {batches}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        val_acc = classifier_accuracy(model, *dataset.val)
        history.append(
            {"epoch": epoch, "loss": total / max(batches, 1), "val_acc": val_acc}
        )
    model.eval()
    result = TrainResult(
        arch=arch,
        accuracy=classifier_accuracy(model, *dataset.test),
        wall_clock_seconds=time.time() - start,
        epochs=config.epochs,
        params=sum(p.numel() for p in model.parameters()),
        history=history,
    )
    return model, result
