"""Why transforming activations equals perturbing the input: the 2x2 case.

A linear transform applied to the activations of a convolution can always be
re-expressed as a perturbation of the convolution's input. This module works
the smallest non-trivial instance end to end: a 2x2 input, a 2x2 kernel with
zero padding on the right and bottom (so the output stays 2x2), and a 2x2
transform applied to the activations with the same padding convention. The
closed-form input perturbation is exact and, notably, independent of the
kernel weights.

Everything here runs in float64; it backs sanity tests for the regional
transformation layer rather than any production path.
"""

from __future__ import annotations

import torch


def conv2x2_lower_pad(x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    """2x2 convolution of a 2x2 input, zero-padded right and bottom.

    Output index (i, j) covers input positions (i..i+1, j..j+1), with
    out-of-range positions read as zero:

        a0 = w0 x0 + w1 x1 + w2 x2 + w3 x3
        a1 = w0 x1 + w2 x3
        a2 = w0 x2 + w1 x3
        a3 = w0 x3
    """
    if x.shape != (2, 2) or w.shape != (2, 2):
        raise ValueError("both input and kernel must be 2x2")
    padded = torch.zeros(3, 3, dtype=x.dtype)
    padded[:2, :2] = x
    out = torch.zeros(2, 2, dtype=x.dtype)
    for i in range(2):
        for j in range(2):
            out[i, j] = (padded[i : i + 2, j : j + 2] * w).sum()
    return out


def transform_activations(a: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Apply the 2x2 transform kernel to activations, same padding rule."""
    return conv2x2_lower_pad(a, u)


def closed_form_perturbation(x: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    """Input perturbation equivalent to transforming the activations by `u`.

    With x = [[x0, x1], [x2, x3]] and u = [[u0, u1], [u2, u3]]:

        d0 = (u0 - 1) x0 + u1 x1 + u2 x2 + u3 x3
        d1 = (u0 - 1) x1 + u2 x3
        d2 = (u0 - 1) x2 + u1 x3
        d3 = (u0 - 1) x3

    Does not depend on the convolution kernel.
    """
    x0, x1, x2, x3 = x.flatten()
    u0, u1, u2, u3 = u.flatten()
    d0 = (u0 - 1) * x0 + u1 * x1 + u2 * x2 + u3 * x3
    d1 = (u0 - 1) * x1 + u2 * x3
    d2 = (u0 - 1) * x2 + u1 * x3
    d3 = (u0 - 1) * x3
    return torch.stack([d0, d1, d2, d3]).reshape(2, 2)


def solve_perturbation(
    x: torch.Tensor, w: torch.Tensor, u: torch.Tensor
) -> torch.Tensor:
    """Brute-force perturbation: solve conv(x + d) = transform(conv(x)) for d.

    Builds the 4x4 linear system of the padded convolution and solves it
    directly. Requires w[0, 0] != 0 (the system matrix has determinant
    w0^4). Exists as an independent route to the same answer as
    `closed_form_perturbation`.
    """
    w0, w1, w2, w3 = (float(v) for v in w.flatten())
    if w0 == 0.0:
        raise ValueError("kernel with w0 == 0 makes the system singular")
    m = torch.tensor(
        [
            [w0, w1, w2, w3],
            [0.0, w0, 0.0, w2],
            [0.0, 0.0, w0, w1],
            [0.0, 0.0, 0.0, w0],
        ],
        dtype=x.dtype,
    )
    a = conv2x2_lower_pad(x, w)
    rhs = (transform_activations(a, u) - a).flatten()
    return torch.linalg.solve(m, rhs).reshape(2, 2)


def equivalence_residual(
    x: torch.Tensor, w: torch.Tensor, u: torch.Tensor
) -> float:
    """Max-abs difference between conv(x + d_closed_form) and transformed
    activations. Exact up to float64 rounding for any kernel."""
    d = closed_form_perturbation(x, u)
    lhs = conv2x2_lower_pad(x + d, w)
    rhs = transform_activations(conv2x2_lower_pad(x, w), u)
    return (lhs - rhs).abs().max().item()


def max_residual_over_draws(n_draws: int, seed: int) -> float:
    """Worst equivalence residual over seeded random float64 draws."""
    g = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n_draws):
        x = torch.randn(2, 2, generator=g, dtype=torch.float64)
        w = torch.randn(2, 2, generator=g, dtype=torch.float64)
        u = torch.randn(2, 2, generator=g, dtype=torch.float64)
        worst = max(worst, equivalence_residual(x, w, u))
    return worst
