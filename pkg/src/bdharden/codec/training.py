"""Training loops for the codec: classifier first, then the decoder."""

from __future__ import annotations

import math
import warnings

import torch
import torch.nn.functional as F

from ..imageops import minibatch_indices, random_crop_flip
from ..seeding import make_rng, spawn_seed
from .networks import Decoder, Encoder, EncoderClassifier


class DecoderDivergence(RuntimeError):
    """Decoder training hit a non-finite loss and was aborted."""


@torch.no_grad()
def classifier_accuracy(
    model: torch.nn.Module,
    images: torch.Tensor,
    labels: torch.Tensor,
    batch_size: int = 512,
) -> float:
    was_training = model.training
    model.eval()
    correct = 0
    for idx in minibatch_indices(images.shape[0], batch_size):
        pred = model(images[idx]).argmax(dim=1)
        correct += int((pred == labels[idx]).sum().item())
    if was_training:
        model.train()
    return correct / images.shape[0]


def train_encoder_classifier(
    clf: EncoderClassifier,
    train_images: torch.Tensor,
    train_labels: torch.Tensor,
    val_images: torch.Tensor,
    val_labels: torch.Tensor,
    epochs: int = 15,
    batch_size: int = 128,
    lr: float = 1e-3,
    rng: torch.Generator | None = None,
    augment: bool = True,
    accuracy_floor: float = 0.0,
) -> list[dict]:
    """Adam training of the staged classifier; returns per-epoch history.

    Enables gradients on entry and freezes the classifier (eval mode,
    requires_grad off) on exit, ready to wrap in an `Encoder`. Emits a
    warning entry in the history if the final held-out accuracy misses
    `accuracy_floor`.
    """
    rng = rng if rng is not None else make_rng(0)
    clf.train()
    clf.requires_grad_(True)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    history: list[dict] = []
    for epoch in range(epochs):
        total, batches = 0.0, 0
        for idx in minibatch_indices(train_images.shape[0], batch_size, rng):
            x = train_images[idx]
            if augment:
                x = random_crop_flip(x, rng)
            loss = F.cross_entropy(clf(x), train_labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        acc = classifier_accuracy(clf, val_images, val_labels)
        history.append(
            {"epoch": epoch, "loss": total / max(batches, 1), "val_acc": acc}
        )
    clf.eval()
    clf.requires_grad_(False)
    final_acc = history[-1]["val_acc"] if history else 0.0
    if final_acc < accuracy_floor:
        history.append(
            {
                "warning": "encoder-accuracy-floor",
                "val_acc": final_acc,
                "floor": accuracy_floor,
            }
        )
    return history


def train_decoder(
    decoder: Decoder,
    encoder: Encoder,
    images: torch.Tensor,
    epochs: int = 50,
    batch_size: int = 64,
    lr: float = 1e-3,
    rng: torch.Generator | None = None,
    val_images: torch.Tensor | None = None,
    mse_ceiling: float | None = None,
) -> list[dict]:
    """Reconstruction training: MSE(decoder(encoder(x)), x), unclamped.

    The stochastic fill draws fresh noise per batch from `rng`; held-out MSE
    (when `val_images` is given) uses the clamped decode with a fixed
    evaluation seed so the curve is comparable across epochs. A non-finite
    batch loss aborts the run with DecoderDivergence. If `mse_ceiling` is set
    and the final reconstruction MSE stays above it, a RuntimeWarning is
    raised and a warning entry appended to the history.
    """
    rng = rng if rng is not None else make_rng(0)
    eval_seed = spawn_seed(rng)
    decoder.train()
    opt = torch.optim.Adam(decoder.parameters(), lr=lr)
    history: list[dict] = []
    for epoch in range(epochs):
        total, batches = 0.0, 0
        for idx in minibatch_indices(images.shape[0], batch_size, rng):
            x = images[idx]
            feats, positions = encoder.encode_with_positions(x)
            recon = decoder(feats, rng=rng, positions=positions)
            loss = F.mse_loss(recon, x)
            if not math.isfinite(loss.item()):
                decoder.eval()
                raise DecoderDivergence(
                    f"non-finite reconstruction loss at epoch {epoch}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            batches += 1
        entry = {"epoch": epoch, "train_mse": total / max(batches, 1)}
        if val_images is not None:
            entry["val_mse"] = heldout_mse(decoder, encoder, val_images, eval_seed)
        history.append(entry)
    decoder.eval()
    if mse_ceiling is not None and history:
        final = history[-1].get("val_mse", history[-1]["train_mse"])
        if final > mse_ceiling:
            warnings.warn(
                f"decoder reconstruction MSE {final:.6f} above the "
                f"configured ceiling {mse_ceiling:.6f}",
                RuntimeWarning,
            )
            history.append(
                {"warning": "reconstruction-mse-ceiling",
                 "mse": final, "ceiling": mse_ceiling}
            )
    return history


@torch.no_grad()
def heldout_mse(
    decoder: Decoder,
    encoder: Encoder,
    images: torch.Tensor,
    seed: int = 0,
    batch_size: int = 256,
) -> float:
    """Mean squared reconstruction error of the clamped decode."""
    rng = make_rng(seed)
    total, n = 0.0, 0
    for idx in minibatch_indices(images.shape[0], batch_size):
        x = images[idx]
        feats, positions = encoder.encode_with_positions(x)
        recon = decoder.decode_image(feats, rng=rng, positions=positions)
        total += F.mse_loss(recon, x, reduction="sum").item()
        n += x.numel()
    return total / n
