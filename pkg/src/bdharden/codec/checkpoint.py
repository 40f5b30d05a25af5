"""Checkpoint format: a directory holding a manifest and one weight blob.

`manifest.json` records what the blob is (kind, architecture fields, any
extra metadata) plus the blob's SHA-256, so corruption and mismatched loads
fail loudly. The blob is a torch state_dict. Codec checkpoints nest one
sub-checkpoint for the classifier and one for the decoder under a shared
top-level description.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch

from ..seeding import file_sha256
from .networks import Decoder, Encoder, EncoderClassifier

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
BLOB = "weights.pt"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path: str | Path, module: torch.nn.Module, kind: str, meta: dict | None = None
) -> Path:
    """Write `module`'s state dict and its manifest under `path`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = path / BLOB
    torch.save(module.state_dict(), blob)
    manifest = {
        "kind": kind,
        "format_version": FORMAT_VERSION,
        "content_hash": file_sha256(blob),
        "meta": meta or {},
    }
    with open(path / MANIFEST, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_manifest(path: str | Path) -> dict:
    path = Path(path)
    try:
        with open(path / MANIFEST) as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise CheckpointError(f"no manifest under {path}") from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable manifest under {path}: {e}") from e


def load_checkpoint(
    path: str | Path, module: torch.nn.Module, kind: str
) -> dict:
    """Verify manifest + blob hash, load weights into `module`, return meta."""
    path = Path(path)
    manifest = read_manifest(path)
    if manifest.get("kind") != kind:
        raise CheckpointError(
            f"{path} holds a {manifest.get('kind')!r} checkpoint, expected {kind!r}"
        )
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format_version')}"
        )
    blob = path / BLOB
    if not blob.exists():
        raise CheckpointError(f"missing weight blob under {path}")
    actual = file_sha256(blob)
    if actual != manifest.get("content_hash"):
        raise CheckpointError(
            f"weight blob under {path} does not match its manifest hash"
        )
    state = torch.load(blob, weights_only=True)
    module.load_state_dict(state, strict=True)
    return manifest.get("meta", {})


CODEC_DESC = "codec.json"


def save_codec(
    path: str | Path, clf: EncoderClassifier, decoder: Decoder, truncate_after: int
) -> Path:
    """Nest classifier and decoder checkpoints under one codec directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    desc = {
        "classifier": clf.arch(),
        "decoder": decoder.arch(),
        "truncate_after": truncate_after,
        "format_version": FORMAT_VERSION,
    }
    with open(path / CODEC_DESC, "w") as f:
        json.dump(desc, f, indent=2, sort_keys=True)
        f.write("\n")
    save_checkpoint(
        path / "encoder",
        clf,
        "encoder-classifier",
        meta=clf.arch() | {"truncate_after": truncate_after},
    )
    save_checkpoint(
        path / "decoder",
        decoder,
        "decoder",
        meta=decoder.arch()
        | {"stats": [s.tolist() for s in decoder.stage_sigmas()]},
    )
    return path


def load_codec(path: str | Path) -> tuple[EncoderClassifier, Encoder, Decoder]:
    """Rebuild (classifier, encoder, decoder) from a codec directory."""
    path = Path(path)
    try:
        with open(path / CODEC_DESC) as f:
            desc = json.load(f)
    except FileNotFoundError as e:
        raise CheckpointError(f"no codec description under {path}") from e
    c = desc["classifier"]
    clf = EncoderClassifier(
        in_channels=c["in_channels"],
        width=c["width"],
        num_classes=c["num_classes"],
        image_size=c["image_size"],
        stages=c["stages"],
    )
    load_checkpoint(path / "encoder", clf, "encoder-classifier")
    d = desc["decoder"]
    decoder = Decoder(
        width=d["width"],
        out_channels=d["out_channels"],
        truncate_after=d["truncate_after"],
        scheme=d["scheme"],
    )
    load_checkpoint(path / "decoder", decoder, "decoder")
    encoder = Encoder(clf, desc["truncate_after"])
    clf.eval()
    decoder.eval()
    return clf, encoder, decoder
