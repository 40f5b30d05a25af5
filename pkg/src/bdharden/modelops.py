"""Small helpers for treating a model as read-only during an operation."""

from __future__ import annotations

from contextlib import contextmanager

from torch import nn


@contextmanager
def frozen(module: nn.Module):
    """Eval mode with gradients to parameters disabled, restored on exit.

    Gradients still flow to the module's inputs, which is exactly what
    input-space optimization (backdoor generation, PGD) needs.
    """
    training = module.training
    flags = [p.requires_grad for p in module.parameters()]
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield module
    finally:
        module.train(training)
        for p, flag in zip(module.parameters(), flags):
            p.requires_grad_(flag)
