"""Dataset ingestion: binary batches, image folders, and synthetic shapes.

The binary format is the classic 3073-byte record layout: one label byte
followed by a 32x32 RGB image stored as three channel planes. `make_shape_
dataset` emits a fully synthetic 10-class dataset in that exact format so the
whole pipeline can run without downloading anything.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..seeding import make_rng

RECORD_BYTES = 3073
SIDE = 32
CHANNELS = 3
BINARY_CLASSES = 10
# seed used to carve the validation split out of the training pool; fixed so
# every run of the same dataset sees the same split
VAL_SPLIT_SEED = 20107

SHAPE_CLASSES = (
    "circle",
    "square",
    "triangle",
    "plus",
    "ring",
    "hbars",
    "vbars",
    "diamond",
    "checker",
    "cross",
)

FORMATS = ("cifar10-binary", "image-folder")


class DatasetError(RuntimeError):
    """Unreadable or malformed dataset input."""


@dataclass
class ImageDataset:
    """Loaded dataset with a recorded train/val/test split.

    All images are float32 in [0, 1], shaped (N, 3, H, W); labels are int64.
    """

    train: tuple[torch.Tensor, torch.Tensor]
    val: tuple[torch.Tensor, torch.Tensor]
    test: tuple[torch.Tensor, torch.Tensor]
    n_classes: int
    split_seed: int

    @property
    def image_size(self) -> int:
        return self.train[0].shape[-1]


def _read_binary_file(path: Path, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    raw = path.read_bytes()
    if len(raw) == 0:
        raise DatasetError(f"{path}: empty batch file")
    if len(raw) % RECORD_BYTES != 0:
        raise DatasetError(
            f"{path}: corrupt record {len(raw) // RECORD_BYTES} "
            f"(file size {len(raw)} is not a multiple of {RECORD_BYTES})"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= n_classes)[0]
    if bad.size:
        raise DatasetError(
            f"{path}: record {int(bad[0])} has label {int(labels[bad[0]])}, "
            f"expected 0..{n_classes - 1}"
        )
    images = records[:, 1:].reshape(-1, CHANNELS, SIDE, SIDE)
    return images, labels


def _to_tensors(images: np.ndarray, labels: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.ascontiguousarray(images)).float() / 255.0
    y = torch.from_numpy(np.ascontiguousarray(labels))
    return x, y


def _load_cifar10_binary(root: Path) -> tuple[tuple, tuple, int]:
    train_files = sorted(root.glob("data_batch*.bin"))
    test_files = sorted(root.glob("test_batch*.bin"))
    if not train_files:
        raise DatasetError(f"no data_batch*.bin files under {root}")
    if not test_files:
        raise DatasetError(f"no test_batch*.bin files under {root}")
    train_parts = [_read_binary_file(p, BINARY_CLASSES) for p in train_files]
    test_parts = [_read_binary_file(p, BINARY_CLASSES) for p in test_files]
    train = _to_tensors(
        np.concatenate([p[0] for p in train_parts]),
        np.concatenate([p[1] for p in train_parts]),
    )
    test = _to_tensors(
        np.concatenate([p[0] for p in test_parts]),
        np.concatenate([p[1] for p in test_parts]),
    )
    return train, test, BINARY_CLASSES


def _load_image_folder(root: Path) -> tuple[tuple, tuple, int]:
    from PIL import Image

    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise DatasetError(f"no class subdirectories under {root}")
    images, labels = [], []
    shape = None
    for cls, d in enumerate(class_dirs):
        files = sorted(d.glob("*.png"))
        if not files:
            raise DatasetError(f"class folder {d} holds no png files")
        for f in files:
            arr = np.asarray(Image.open(f).convert("RGB"), dtype=np.uint8)
            if shape is None:
                shape = arr.shape
            elif arr.shape != shape:
                raise DatasetError(
                    f"{f}: image shape {arr.shape} differs from {shape}"
                )
            images.append(arr.transpose(2, 0, 1))
            labels.append(cls)
    data = _to_tensors(np.stack(images), np.asarray(labels, dtype=np.int64))
    return data, None, len(class_dirs)


def _carve(
    pool: tuple[torch.Tensor, torch.Tensor], count: int, rng: torch.Generator
) -> tuple[tuple, tuple]:
    images, labels = pool
    n = images.shape[0]
    if count >= n:
        raise DatasetError(
            f"cannot carve {count} samples out of a pool of {n}"
        )
    perm = torch.randperm(n, generator=rng)
    carved = perm[:count].sort().values
    kept = perm[count:].sort().values
    return (images[kept], labels[kept]), (images[carved], labels[carved])


def load_dataset(
    path: str | Path,
    format: str = "cifar10-binary",
    val_size: int = 2000,
    split_seed: int = VAL_SPLIT_SEED,
) -> ImageDataset:
    """Load a dataset and record its train/val/test split.

    The validation set is carved from the training pool with `split_seed`
    (and, for image folders without a separate test batch, the test set is
    carved first with the same seed).
    """
    root = Path(path)
    if not root.exists():
        raise DatasetError(f"dataset path {root} does not exist")
    if format not in FORMATS:
        raise DatasetError(f"unknown dataset format {format!r}")
    rng = make_rng(split_seed)
    if format == "cifar10-binary":
        train_pool, test, n_classes = _load_cifar10_binary(root)
    else:
        train_pool, test, n_classes = _load_image_folder(root)
        if test is None:
            train_pool, test = _carve(train_pool, val_size, rng)
    train, val = _carve(train_pool, val_size, rng)
    return ImageDataset(
        train=train, val=val, test=test,
        n_classes=n_classes, split_seed=split_seed,
    )


def write_cifar10_binary(
    path: str | Path, images: np.ndarray, labels: np.ndarray
) -> Path:
    """Write uint8 images (N, 3, 32, 32) and labels as one binary batch."""
    path = Path(path)
    if images.dtype != np.uint8 or images.shape[1:] != (CHANNELS, SIDE, SIDE):
        raise ValueError("images must be uint8 of shape (N, 3, 32, 32)")
    records = np.empty((images.shape[0], RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(images.shape[0], -1)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(records.tobytes())
    return path


def _shape_mask(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = size / 2 + rng.uniform(-3, 3)
    cx = size / 2 + rng.uniform(-3, 3)
    r = rng.uniform(0.28, 0.42) * size
    dy, dx = yy - cy, xx - cx
    dist = np.sqrt(dy ** 2 + dx ** 2)
    box = np.maximum(np.abs(dy), np.abs(dx)) <= r
    if kind == "circle":
        return dist <= r
    if kind == "square":
        return box
    if kind == "triangle":
        return (np.abs(dy) <= r) & (np.abs(dx) <= (dy + r) / 2)
    if kind == "plus":
        w = 0.3 * r
        return box & ((np.abs(dx) <= w) | (np.abs(dy) <= w))
    if kind == "ring":
        return (dist <= r) & (dist >= 0.55 * r)
    if kind == "hbars":
        p = max(2, int(round(0.35 * r)))
        return box & ((np.floor(dy / p).astype(int) % 2) == 0)
    if kind == "vbars":
        p = max(2, int(round(0.35 * r)))
        return box & ((np.floor(dx / p).astype(int) % 2) == 0)
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    if kind == "checker":
        p = max(2, int(round(0.5 * r)))
        cell = np.floor(dy / p).astype(int) + np.floor(dx / p).astype(int)
        return box & (cell % 2 == 0)
    if kind == "cross":
        w = 0.3 * r
        return box & ((np.abs(dy - dx) <= w) | (np.abs(dy + dx) <= w))
    raise ValueError(f"unknown shape kind {kind!r}")


def _render_shape(cls: int, size: int, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.05, 0.35, size=3)
    slope = rng.uniform(-0.15, 0.15)
    rows = np.linspace(0, 1, size)[:, None]
    background = np.clip(
        base[:, None, None] + slope * rows[None] + rng.normal(0, 0.02, (3, size, size)),
        0.0, 0.5,
    )
    color = rng.uniform(0.6, 1.0, size=3)
    mask = _shape_mask(SHAPE_CLASSES[cls], size, rng)
    img = background.copy()
    img[:, mask] = color[:, None] + rng.normal(0, 0.02, (3, int(mask.sum())))
    return np.clip(img, 0.0, 1.0)


def make_shape_dataset(
    out_dir: str | Path,
    n_train: int = 10000,
    n_test: int = 2000,
    seed: int = 7,
) -> Path:
    """Synthesize the 10-class shape dataset as binary batches.

    Classes cycle through `SHAPE_CLASSES`; every image gets its own jittered
    geometry, foreground color, and noisy gradient background. Writes
    data_batch_1.bin and test_batch.bin under `out_dir` and returns it.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for name, count in (("data_batch_1.bin", n_train), ("test_batch.bin", n_test)):
        labels = np.arange(count, dtype=np.int64) % len(SHAPE_CLASSES)
        images = np.empty((count, CHANNELS, SIDE, SIDE), dtype=np.uint8)
        for i in range(count):
            img = _render_shape(int(labels[i]), SIDE, rng)
            images[i] = np.round(img * 255).astype(np.uint8)
        write_cifar10_binary(out / name, images, labels)
    return out
