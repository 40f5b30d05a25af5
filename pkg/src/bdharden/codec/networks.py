"""Codec networks: a small staged classifier and its mirrored decoder.

The encoder is the prefix of a VGG-style classifier (two 3x3 conv-ReLU
layers per stage, stride-2 max pool after each stage, channel width doubling
per stage) cut off after a chosen pooling stage. The decoder mirrors the
truncated prefix: one cell-upsampling step per pooling stage followed by
transposed convolutions, ReLU everywhere except the final output layer,
which stays linear. Images clamp to [0, 1] only at `decode_image`; training
works on the unclamped output.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from ..seeding import seeded_torch
from .upsample import SCHEMES, pool_with_positions, upsample_cells


def stage_channels(width: int, stage: int) -> int:
    """Channel count at 1-based `stage`: width, 2*width, 4*width, ..."""
    return width * (2 ** (stage - 1))


class EncoderClassifier(nn.Module):
    """Staged conv classifier whose prefix serves as the codec encoder."""

    def __init__(
        self,
        in_channels: int = 3,
        width: int = 64,
        num_classes: int = 10,
        image_size: int = 32,
        stages: int = 2,
        init_seed: int | None = None,
    ):
        super().__init__()
        if image_size % (2**stages) != 0:
            raise ValueError("image size must be divisible by 2**stages")
        self.in_channels = in_channels
        self.width = width
        self.num_classes = num_classes
        self.image_size = image_size
        self.num_stages = stages
        blocks = []
        ch_in = in_channels
        with seeded_torch(init_seed):
            for s in range(1, stages + 1):
                ch = stage_channels(width, s)
                blocks.append(
                    nn.Sequential(
                        nn.Conv2d(ch_in, ch, 3, padding=1),
                        nn.ReLU(),
                        nn.Conv2d(ch, ch, 3, padding=1),
                        nn.ReLU(),
                    )
                )
                ch_in = ch
            self.blocks = nn.ModuleList(blocks)
            feat = image_size // (2**stages)
            self.head = nn.Linear(ch_in * feat * feat, num_classes)

    def features(
        self, x: torch.Tensor, upto: int, keep_pre_pool: bool = False
    ) -> tuple[torch.Tensor, list[torch.Tensor], list[torch.Tensor]]:
        """Run the prefix through `upto` pooling stages.

        Returns (pooled features, per-stage argmax position codes,
        per-stage pre-pool activations — empty unless requested).
        """
        if not 1 <= upto <= self.num_stages:
            raise ValueError(f"stage {upto} outside 1..{self.num_stages}")
        positions: list[torch.Tensor] = []
        pre_pool: list[torch.Tensor] = []
        for s in range(upto):
            x = self.blocks[s](x)
            if keep_pre_pool:
                pre_pool.append(x)
            x, codes = pool_with_positions(x)
            positions.append(codes)
        return x, positions, pre_pool

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for s in range(self.num_stages):
            x = F.max_pool2d(self.blocks[s](x), 2)
        return self.head(x.flatten(1))

    def arch(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "width": self.width,
            "num_classes": self.num_classes,
            "image_size": self.image_size,
            "stages": self.num_stages,
        }


class Encoder(nn.Module):
    """Frozen feature extractor: classifier prefix up to a pooling stage."""

    def __init__(self, classifier: EncoderClassifier, truncate_after: int = 1):
        super().__init__()
        if not 1 <= truncate_after <= classifier.num_stages:
            raise ValueError(
                f"truncation {truncate_after} outside 1..{classifier.num_stages}"
            )
        classifier.eval()
        for p in classifier.parameters():
            p.requires_grad_(False)
        self.classifier = classifier
        self.truncate_after = truncate_after

    @property
    def channels(self) -> int:
        return stage_channels(self.classifier.width, self.truncate_after)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier.features(x, self.truncate_after)[0]

    def encode_with_positions(
        self, x: torch.Tensor
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        feats, positions, _ = self.classifier.features(x, self.truncate_after)
        return feats, positions


class Decoder(nn.Module):
    """Mirror of the truncated encoder, one upsample step per pooling stage.

    Per-stage noise scales for the gaussian scheme live in registered
    buffers, so a checkpoint carries them. They must be set (from encoder
    activation statistics) before gaussian decoding.
    """

    def __init__(
        self,
        width: int = 64,
        out_channels: int = 3,
        truncate_after: int = 1,
        scheme: str = "gaussian",
        init_seed: int | None = None,
    ):
        super().__init__()
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
        self.width = width
        self.out_channels = out_channels
        self.truncate_after = truncate_after
        self.scheme = scheme
        stages = []
        with seeded_torch(init_seed):
            for s in range(truncate_after, 0, -1):
                ch = stage_channels(width, s)
                ch_next = stage_channels(width, s - 1) if s > 1 else out_channels
                layers: list[nn.Module] = [
                    nn.ConvTranspose2d(ch, ch, 3, padding=1),
                    nn.ReLU(),
                    nn.ConvTranspose2d(ch, ch_next, 3, padding=1),
                ]
                if s > 1:
                    layers.append(nn.ReLU())
                stages.append(nn.Sequential(*layers))
        self.up_stages = nn.ModuleList(stages)
        for s in range(1, truncate_after + 1):
            self.register_buffer(f"sigma_{s}", torch.zeros(stage_channels(width, s)))
        self.register_buffer("stats_ready", torch.tensor(0, dtype=torch.uint8))

    def set_stats(self, sigmas: list[torch.Tensor]) -> None:
        """Per-stage per-channel noise stds, ordered stage 1..truncation."""
        if len(sigmas) != self.truncate_after:
            raise ValueError(
                f"need {self.truncate_after} stage stats, got {len(sigmas)}"
            )
        for s, sig in enumerate(sigmas, start=1):
            buf = getattr(self, f"sigma_{s}")
            sig = torch.as_tensor(sig, dtype=torch.float32).flatten()
            if sig.shape != buf.shape:
                raise ValueError(
                    f"stage {s} expects {tuple(buf.shape)} stats, got {tuple(sig.shape)}"
                )
            if (sig < 0).any():
                raise ValueError("noise stds must be non-negative")
            buf.copy_(sig)
        self.stats_ready.fill_(1)

    def stage_sigmas(self) -> list[torch.Tensor]:
        return [getattr(self, f"sigma_{s}") for s in range(1, self.truncate_after + 1)]

    def forward(
        self,
        a: torch.Tensor,
        rng: torch.Generator | None = None,
        positions: list[torch.Tensor] | None = None,
    ) -> torch.Tensor:
        if self.scheme == "gaussian":
            if not bool(self.stats_ready):
                raise RuntimeError(
                    "gaussian decoding needs channel stats; call set_stats first"
                )
            if rng is None:
                raise ValueError("gaussian decoding needs an rng for the noise fill")
        if self.scheme == "argmax" and positions is None:
            raise ValueError("argmax decoding needs the encoder pooling positions")
        x = a
        for idx, s in enumerate(range(self.truncate_after, 0, -1)):
            pos = positions[s - 1] if positions is not None else None
            x = upsample_cells(
                x,
                self.scheme,
                sigma=getattr(self, f"sigma_{s}"),
                positions=pos,
                rng=rng,
            )
            x = self.up_stages[idx](x)
        return x

    def decode_image(
        self,
        a: torch.Tensor,
        rng: torch.Generator | None = None,
        positions: list[torch.Tensor] | None = None,
    ) -> torch.Tensor:
        """Decode and clamp to valid image range [0, 1]."""
        return self.forward(a, rng=rng, positions=positions).clamp(0.0, 1.0)

    def arch(self) -> dict:
        return {
            "width": self.width,
            "out_channels": self.out_channels,
            "truncate_after": self.truncate_after,
            "scheme": self.scheme,
        }


def build_codec_pair(
    width: int = 64,
    num_classes: int = 10,
    image_size: int = 32,
    stages: int = 2,
    truncate_after: int = 1,
    scheme: str = "gaussian",
    in_channels: int = 3,
    seed: int = 0,
) -> tuple[EncoderClassifier, Encoder, Decoder]:
    """Fresh classifier + frozen-prefix encoder + mirrored decoder."""
    clf = EncoderClassifier(
        in_channels=in_channels,
        width=width,
        num_classes=num_classes,
        image_size=image_size,
        stages=stages,
        init_seed=seed,
    )
    enc = Encoder(clf, truncate_after)
    dec = Decoder(
        width=width,
        out_channels=in_channels,
        truncate_after=truncate_after,
        scheme=scheme,
        init_seed=seed + 1,
    )
    return clf, enc, dec
