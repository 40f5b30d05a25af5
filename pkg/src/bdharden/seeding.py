"""Deterministic RNG plumbing and weight hashing shared across modules."""

from __future__ import annotations

import hashlib
import random
from contextlib import contextmanager

import numpy as np
import torch


def make_rng(seed: int) -> torch.Generator:
    """CPU torch generator seeded with `seed`."""
    g = torch.Generator(device="cpu")
    g.manual_seed(int(seed))
    return g


def seed_everything(seed: int) -> None:
    """Seed the global python/numpy/torch RNGs (CLI entry points only).

    Library code takes explicit generators instead of touching global state.
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def spawn_seed(rng: torch.Generator) -> int:
    """Draw a fresh child seed from `rng`."""
    return int(torch.randint(0, 2**31 - 1, (1,), generator=rng).item())


@contextmanager
def seeded_torch(seed: int | None):
    """Temporarily seed the global torch RNG, restoring it afterwards.

    Module weight initialization draws from global state; this pins it
    without disturbing the caller. `None` leaves the global state alone.
    """
    if seed is None:
        yield
        return
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield


def state_dict_hash(module: torch.nn.Module) -> str:
    """SHA-256 over the module's parameters and buffers, keys sorted.

    Bitwise: any single-bit weight change changes the digest. Used to prove
    a subject model was not modified by a read-only pass.
    """
    h = hashlib.sha256()
    sd = module.state_dict()
    for key in sorted(sd.keys()):
        h.update(key.encode())
        h.update(sd[key].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tensor_hash(*tensors: torch.Tensor) -> str:
    """SHA-256 over tensor contents and shapes, in argument order."""
    h = hashlib.sha256()
    for t in tensors:
        h.update(str(tuple(t.shape)).encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()
