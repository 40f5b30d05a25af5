"""Adversarial hardening loop: regenerate per-pair backdoors, train against them.

Each round picks the currently most vulnerable ordered pair, warm-starts
backdoor generation in both directions against the current model, and runs a
fixed number of optimizer steps on batches that mix clean samples (true
labels) with backdoor samples labeled by their victim class. Clean accuracy
is monitored every round; dropping more than the configured floor below the
starting accuracy aborts the run and restores the best checkpoint seen.
"""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
import torch.nn.functional as F
from torch import nn

from bdharden.backdoor.generator import (
    GenConfig,
    GenerationError,
    PerturbationGenerator,
    generate_backdoor,
)
from bdharden.codec.checkpoint import save_checkpoint
from bdharden.codec.networks import Decoder, Encoder
from bdharden.codec.training import classifier_accuracy
from bdharden.modelops import frozen
from bdharden.seeding import make_rng, spawn_seed
from .schedule import PairSchedule, class_samples, select_pair, warmup_scan

ROUND_COLUMNS = (
    "round",
    "victim",
    "target",
    "status",
    "flip_vt_before",
    "flip_tv_before",
    "flip_vt_after",
    "flip_tv_after",
    "clean_accuracy",
    "asr",
    "score_vt",
    "score_tv",
    "seconds",
)


@dataclass
class HardeningConfig:
    """Knobs for the hardening loop; defaults are the reference protocol."""

    rounds: int = 50
    steps_per_round: int = 20
    regen_epochs: int = 30
    learning_rate: float = 1e-3
    accuracy_floor: float = 0.04
    clean_fraction: float = 0.5
    data_budget: float = 0.05
    batch_size: int = 32
    gen_samples: int = 64
    flip_threshold: float = 0.9
    momentum: float = 0.9
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.data_budget <= 1:
            raise ValueError("data_budget must lie in (0, 1]")
        if not 0 <= self.clean_fraction <= 1:
            raise ValueError("clean_fraction must lie in [0, 1]")
        if self.rounds < 0 or self.steps_per_round < 1:
            raise ValueError("rounds must be >= 0 and steps_per_round >= 1")


@dataclass
class RoundRecord:
    round: int
    victim: int
    target: int
    status: str  # "ok" or "generation-failed"
    flip_vt_before: float | None
    flip_tv_before: float | None
    flip_vt_after: float | None
    flip_tv_after: float | None
    clean_accuracy: float
    asr: float | None
    score_vt: float | None
    score_tv: float | None
    seconds: float

    def row(self) -> dict:
        return {k: getattr(self, k) for k in ROUND_COLUMNS}


@dataclass
class HardeningReport:
    initial_accuracy: float
    final_accuracy: float = 0.0
    rounds: list[RoundRecord] = field(default_factory=list)
    aborted: bool = False
    abort_round: int | None = None
    checkpoint_path: str | None = None

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=ROUND_COLUMNS)
            writer.writeheader()
            for record in self.rounds:
                writer.writerow(record.row())

    def text(self) -> str:
        lines = [
            "hardening report",
            f"rounds completed: {len(self.rounds)}",
            f"initial clean accuracy: {self.initial_accuracy:.4f}",
            f"final clean accuracy: {self.final_accuracy:.4f}",
        ]
        if self.aborted:
            lines.append(
                f"aborted at round {self.abort_round}: accuracy floor hit; "
                "best checkpoint restored"
            )
        failed = [r.round for r in self.rounds if r.status != "ok"]
        if failed:
            lines.append(f"generation-failed rounds: {failed}")
        if self.checkpoint_path:
            lines.append(f"final checkpoint: {self.checkpoint_path}")
        last_asr = next(
            (r.asr for r in reversed(self.rounds) if r.asr is not None), None
        )
        if last_asr is not None:
            lines.append(f"last measured asr: {last_asr:.4f}")
        return "\n".join(lines) + "\n"


@torch.no_grad()
def _flip_rate(model: nn.Module, batch: torch.Tensor, target: int) -> float:
    with frozen(model):
        preds = model(batch).argmax(dim=1)
    return float((preds == target).float().mean())


def _clean_counts(batch_size: int, clean_fraction: float) -> tuple[int, int]:
    n_clean = round(batch_size * clean_fraction)
    return n_clean, batch_size - n_clean


def build_round_batch(
    images: torch.Tensor,
    labels: torch.Tensor,
    batch_vt: torch.Tensor,
    batch_tv: torch.Tensor,
    victim: int,
    target: int,
    batch_size: int,
    clean_fraction: float,
    rng: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """One training batch: clean rows with true labels first, then backdoor
    rows from both directions, each labeled with its own source class. An odd
    backdoor count gives the extra row to the victim->target direction."""
    n_clean, n_backdoor = _clean_counts(batch_size, clean_fraction)
    parts_x, parts_y = [], []
    if n_clean:
        idx = torch.randint(images.shape[0], (n_clean,), generator=rng)
        parts_x.append(images[idx])
        parts_y.append(labels[idx])
    if n_backdoor:
        n_vt = n_backdoor // 2 + n_backdoor % 2
        n_tv = n_backdoor // 2
        for batch, count, label in (
            (batch_vt, n_vt, victim), (batch_tv, n_tv, target),
        ):
            if count == 0:
                continue
            rows = torch.randint(batch.shape[0], (count,), generator=rng)
            parts_x.append(batch[rows])
            parts_y.append(torch.full((count,), label, dtype=torch.long))
    return torch.cat(parts_x), torch.cat(parts_y)


def harden(
    model: nn.Module,
    codecs: tuple[Encoder, Decoder],
    data: tuple[torch.Tensor, torch.Tensor],
    config: HardeningConfig,
    val_data: tuple[torch.Tensor, torch.Tensor] | None = None,
    schedule: PairSchedule | None = None,
    asr_fn: Callable[[nn.Module], float] | None = None,
    out_dir: str | Path | None = None,
) -> tuple[nn.Module, HardeningReport]:
    """Iteratively enlarge the most vulnerable pair distances of `model`.

    `data` is the available training subset (the caller applies the data
    budget); `val_data` drives the accuracy floor (falls back to `data`).
    The model is modified in place and also returned, and is kept in eval
    mode throughout so normalization statistics stay frozen while the
    weights train. With rounds=0 the weights are untouched.
    """
    encoder, decoder = codecs
    images, labels = data
    val_images, val_labels = val_data if val_data is not None else data
    rng = make_rng(config.seed)

    initial_acc = classifier_accuracy(model, val_images, val_labels)
    report = HardeningReport(initial_accuracy=initial_acc)
    if config.rounds == 0:
        report.final_accuracy = initial_acc
        return model, report

    if schedule is None:
        schedule = warmup_scan(model, codecs, data, config)
    optimizer = torch.optim.SGD(
        model.parameters(), lr=config.learning_rate, momentum=config.momentum
    )
    best_state = copy.deepcopy(model.state_dict())
    best_acc = initial_acc
    warm: dict[tuple[int, int], PerturbationGenerator] = {}
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    for round_index in range(config.rounds):
        start = time.time()
        victim, target = select_pair(schedule)
        round_seed = spawn_seed(rng)

        results = {}
        failed = False
        for a, b in ((victim, target), (target, victim)):
            samples = class_samples(
                images, labels, a, config.gen_samples, round_seed + a
            )
            gen_config = GenConfig(
                epochs=config.regen_epochs,
                batch_size=config.batch_size,
                flip_threshold=config.flip_threshold,
                seed=round_seed + a,
            )
            try:
                results[(a, b)] = generate_backdoor(
                    model, encoder, decoder, samples, b,
                    config=gen_config, victim=a, warm_start=warm.get((a, b)),
                )
            except GenerationError:
                failed = True
                break

        if failed:
            schedule.penalize((victim, target), round_index)
            schedule.penalize((target, victim), round_index)
            acc = classifier_accuracy(model, val_images, val_labels)
            report.rounds.append(RoundRecord(
                round=round_index, victim=victim, target=target,
                status="generation-failed",
                flip_vt_before=None, flip_tv_before=None,
                flip_vt_after=None, flip_tv_after=None,
                clean_accuracy=acc,
                asr=asr_fn(model) if asr_fn else None,
                score_vt=schedule.scores[(victim, target)],
                score_tv=schedule.scores[(target, victim)],
                seconds=time.time() - start,
            ))
            continue

        res_vt = results[(victim, target)]
        res_tv = results[(target, victim)]
        warm[(victim, target)] = res_vt.generator
        warm[(target, victim)] = res_tv.generator

        # The model stays in eval mode through the update steps: batches are
        # half synthetic triggers, and letting normalization layers absorb
        # their running statistics costs several accuracy points per round
        # while the weights themselves train fine on frozen statistics.
        for _ in range(config.steps_per_round):
            batch_x, batch_y = build_round_batch(
                images, labels,
                res_vt.backdoor_batch, res_tv.backdoor_batch,
                victim, target,
                config.batch_size, config.clean_fraction, rng,
            )
            optimizer.zero_grad()
            loss = F.cross_entropy(model(batch_x), batch_y)
            loss.backward()
            optimizer.step()

        for (a, b), res in results.items():
            if res.converged:
                schedule.update((a, b), res.content_distance, round_index)
            else:
                schedule.penalize((a, b), round_index)

        acc = classifier_accuracy(model, val_images, val_labels)
        report.rounds.append(RoundRecord(
            round=round_index, victim=victim, target=target, status="ok",
            flip_vt_before=res_vt.flip_rate,
            flip_tv_before=res_tv.flip_rate,
            flip_vt_after=_flip_rate(model, res_vt.backdoor_batch, target),
            flip_tv_after=_flip_rate(model, res_tv.backdoor_batch, victim),
            clean_accuracy=acc,
            asr=asr_fn(model) if asr_fn else None,
            score_vt=schedule.scores[(victim, target)],
            score_tv=schedule.scores[(target, victim)],
            seconds=time.time() - start,
        ))

        if acc < initial_acc - config.accuracy_floor:
            model.load_state_dict(best_state)
            report.aborted = True
            report.abort_round = round_index
            break
        if acc >= best_acc:
            best_acc = acc
            best_state = copy.deepcopy(model.state_dict())
        if (
            out_path is not None
            and config.checkpoint_every
            and (round_index + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(
                out_path / f"round-{round_index + 1:04d}",
                model,
                kind="subject-model",
                meta={"round": round_index + 1, "clean_accuracy": acc},
            )

    report.final_accuracy = classifier_accuracy(model, val_images, val_labels)
    if out_path is not None:
        final = out_path / "hardened"
        save_checkpoint(
            final, model, kind="subject-model",
            meta={
                "rounds": len(report.rounds),
                "clean_accuracy": report.final_accuracy,
                "aborted": report.aborted,
            },
        )
        report.checkpoint_path = str(final)
        report.write_csv(out_path / "rounds.csv")
        (out_path / "report.txt").write_text(report.text())
    return model, report
