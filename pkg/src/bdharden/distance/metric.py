"""Class-distance metric: encoder-feature MSE and the improvement ratio."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import torch

from bdharden.codec.networks import Encoder
from bdharden.imageops import minibatch_indices


@torch.no_grad()
def feature_distance(
    encoder: Encoder,
    clean: torch.Tensor,
    backdoor: torch.Tensor,
    batch_size: int = 64,
) -> float:
    """Mean over samples of the MSE between encoder feature maps.

    The batches must be aligned sample-by-sample (clean[i] and backdoor[i]
    are versions of the same image). Accumulated in float64; symmetric in
    its two image arguments; zero exactly when the features are identical.
    """
    if clean.shape != backdoor.shape:
        raise ValueError(
            f"batches must align: {tuple(clean.shape)} vs {tuple(backdoor.shape)}"
        )
    if clean.dim() != 4:
        raise ValueError("expected (B, C, H, W) batches")
    total = 0.0
    for idx in minibatch_indices(clean.shape[0], batch_size):
        fa = encoder(clean[idx]).double()
        fb = encoder(backdoor[idx]).double()
        per_sample = (fa - fb).pow(2).mean(dim=(1, 2, 3))
        total += float(per_sample.sum().item())
    return total / clean.shape[0]


@dataclass
class PairMeasurement:
    """Outcome of measuring one ordered (victim, target) pair."""

    victim: int
    target: int
    distance: float
    flip_rate: float
    converged: bool
    seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "victim": self.victim,
            "target": self.target,
            "distance": self.distance,
            "flip_rate": self.flip_rate,
            "converged": self.converged,
            "seeds": list(self.seeds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairMeasurement":
        return cls(
            victim=int(d["victim"]),
            target=int(d["target"]),
            distance=float(d["distance"]),
            flip_rate=float(d["flip_rate"]),
            converged=bool(d["converged"]),
            seeds=[int(s) for s in d["seeds"]],
        )


@dataclass
class DistanceMatrix:
    """Pair-wise class distances; the diagonal is undefined and never set."""

    n: int
    pairs: dict[tuple[int, int], PairMeasurement] = field(default_factory=dict)

    def add(self, m: PairMeasurement) -> None:
        if m.victim == m.target:
            raise ValueError("diagonal pairs are undefined")
        if not 0 <= m.victim < self.n or not 0 <= m.target < self.n:
            raise ValueError(f"pair ({m.victim}, {m.target}) outside 0..{self.n - 1}")
        if m.distance < 0:
            raise ValueError("distances are non-negative")
        self.pairs[(m.victim, m.target)] = m

    def valid_pairs(self) -> dict[tuple[int, int], PairMeasurement]:
        """Pairs where some trial reached the flip threshold."""
        return {k: v for k, v in self.pairs.items() if v.converged}

    def mean_distance(self) -> float | None:
        valid = self.valid_pairs()
        if not valid:
            return None
        return sum(m.distance for m in valid.values()) / len(valid)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "pairs": [
                m.to_dict() for _, m in sorted(self.pairs.items())
            ],
            "mean_distance": self.mean_distance(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DistanceMatrix":
        out = cls(n=int(d["n"]))
        for p in d["pairs"]:
            out.add(PairMeasurement.from_dict(p))
        return out


def relative_improvement(
    original: DistanceMatrix, hardened: DistanceMatrix
) -> float:
    """Average relative distance growth over pairs valid in both matrices.

    For each ordered pair measured and converged in both, the term is
    (hardened - original) / original; the result is the plain average of the
    terms. A valid pair with original distance 0 cannot contribute a finite
    ratio, so it is excluded with a warning. Identical matrices give 0.
    """
    if original.n != hardened.n:
        raise ValueError("matrices must describe the same class count")
    common = set(original.valid_pairs()) & set(hardened.valid_pairs())
    terms = []
    for key in sorted(common):
        base = original.pairs[key].distance
        if base == 0:
            warnings.warn(
                f"pair {key} has zero baseline distance; excluded from the "
                "improvement average",
                RuntimeWarning,
                stacklevel=2,
            )
            continue
        terms.append((hardened.pairs[key].distance - base) / base)
    if not terms:
        raise ValueError("no common valid pairs with nonzero baseline distance")
    return sum(terms) / len(terms)


def save_matrix(
    path: str | Path,
    matrix: DistanceMatrix,
    baseline: DistanceMatrix | None = None,
) -> None:
    """Write the matrix as JSON; includes the improvement when a baseline is given."""
    payload = matrix.to_dict()
    if baseline is not None:
        payload["improvement_vs_baseline"] = relative_improvement(baseline, matrix)
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_matrix(path: str | Path) -> DistanceMatrix:
    return DistanceMatrix.from_dict(json.loads(Path(path).read_text()))


def distance_report(
    matrix: DistanceMatrix, baseline: DistanceMatrix | None = None
) -> str:
    """Human-readable summary, one line per measured pair."""
    lines = ["class-distance report", f"classes: {matrix.n}"]
    valid = matrix.valid_pairs()
    lines.append(f"pairs measured: {len(matrix.pairs)} ({len(valid)} converged)")
    mean = matrix.mean_distance()
    if mean is not None:
        lines.append(f"mean distance over converged pairs: {mean:.6f}")
    if baseline is not None:
        imp = relative_improvement(baseline, matrix)
        lines.append(f"improvement vs baseline: {imp * 100:+.2f}%")
    lines.append(f"{'victim':>6} {'target':>6} {'distance':>12} {'flip':>6} conv")
    for (v, t), m in sorted(matrix.pairs.items()):
        lines.append(
            f"{v:>6} {t:>6} {m.distance:>12.6f} {m.flip_rate:>6.3f} "
            f"{'yes' if m.converged else 'no'}"
        )
    return "\n".join(lines) + "\n"
