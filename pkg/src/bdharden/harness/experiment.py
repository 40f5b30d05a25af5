"""Experiment orchestration: phased runs, artifact persistence, run reports.

A run executes its configured phases in declared order inside one output
directory. Every phase persists its artifacts as it finishes, so a failed
run keeps everything produced before the failure and the report marks the
phase that broke. Rerunning a completed identical config is refused unless
forced.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch
import yaml

from ..attacks.poison import PoisonSpec, default_spec, eval_asr, poison
from ..codec.checkpoint import load_checkpoint, load_codec, save_checkpoint, save_codec
from ..codec.networks import build_codec_pair
from ..codec.stats import collect_channel_stats
from ..codec.training import (
    classifier_accuracy,
    heldout_mse,
    train_decoder,
    train_encoder_classifier,
)
from ..distance.measure import MeasurementProtocol, measure_matrix, sample_pairs
from ..distance.metric import relative_improvement, save_matrix
from ..hardening import HardeningConfig, harden
from ..seeding import make_rng
from .data import ImageDataset, load_dataset
from .models import TrainConfig, build_model, train_model
from .robustness import PGD_EPS, PGD_STEPS, FinetuneConfig, finetune_baseline, pgd_eval

PHASES = ("train", "poison", "train-codec", "measure", "harden", "evaluate")


class ExperimentError(RuntimeError):
    """Configuration or orchestration failure outside any phase."""


class ExperimentExists(ExperimentError):
    """A completed run with the identical config hash already exists."""


@dataclass
class ExperimentConfig:
    """One experiment: dataset, architecture, phases, per-phase knobs.

    `name` and `out` are plumbing; everything else is semantic and feeds the
    config hash.
    """

    name: str = "experiment"
    out: str = "runs/experiment"
    seed: int = 0
    arch: str = "small-cnn"
    dataset: dict = field(default_factory=dict)
    phases: list[str] = field(default_factory=lambda: ["train", "evaluate"])
    train: dict = field(default_factory=dict)
    poison: dict = field(default_factory=dict)
    train_codec: dict = field(default_factory=dict)
    measure: dict = field(default_factory=dict)
    harden: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)

    def __post_init__(self):
        for phase in self.phases:
            if phase not in PHASES:
                raise ExperimentError(
                    f"unknown phase {phase!r}, expected one of {PHASES}"
                )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ExperimentError(f"{path}: config root must be a mapping")
        known = {f.name for f in dataclasses.fields(cls)}
        # YAML spells the codec block with a dash, python with an underscore
        if "train-codec" in raw:
            raw["train_codec"] = raw.pop("train-codec")
        unknown = set(raw) - known
        if unknown:
            raise ExperimentError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**raw)

    def semantic_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("name")
        d.pop("out")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PhaseRecord:
    name: str
    minutes: float
    metrics: dict = field(default_factory=dict)


@dataclass
class RunReport:
    config_hash: str
    seed: int
    phases: list[PhaseRecord] = field(default_factory=list)
    failed_phase: str | None = None
    error: str | None = None
    accuracy: float | None = None
    robustness: float | None = None
    asr: float | None = None
    asr_before_hardening: float | None = None
    distance_mean: float | None = None
    distance_improvement: float | None = None
    baseline: dict | None = None
    complete: bool = False

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "complete": self.complete,
            "failed_phase": self.failed_phase,
            "error": self.error,
            "accuracy": self.accuracy,
            "robustness": self.robustness,
            "asr": self.asr,
            "asr_before_hardening": self.asr_before_hardening,
            "distance_mean": self.distance_mean,
            "distance_improvement": self.distance_improvement,
            "baseline": self.baseline,
            "phases": [
                {"name": p.name, "minutes": p.minutes, "metrics": p.metrics}
                for p in self.phases
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        report = cls(config_hash=d["config_hash"], seed=d["seed"])
        report.complete = d.get("complete", False)
        report.failed_phase = d.get("failed_phase")
        report.error = d.get("error")
        report.accuracy = d.get("accuracy")
        report.robustness = d.get("robustness")
        report.asr = d.get("asr")
        report.asr_before_hardening = d.get("asr_before_hardening")
        report.distance_mean = d.get("distance_mean")
        report.distance_improvement = d.get("distance_improvement")
        report.baseline = d.get("baseline")
        report.phases = [
            PhaseRecord(p["name"], p["minutes"], p.get("metrics", {}))
            for p in d.get("phases", [])
        ]
        return report

    def text(self) -> str:
        lines = [
            "run report",
            f"config hash: {self.config_hash}",
            f"seed: {self.seed}",
            f"status: {'complete' if self.complete else 'partial'}",
        ]
        if self.failed_phase:
            lines.append(f"failed phase: {self.failed_phase}: {self.error}")
        for label, value in (
            ("clean accuracy", self.accuracy),
            ("pgd robustness", self.robustness),
            ("attack success rate", self.asr),
            ("asr before hardening", self.asr_before_hardening),
            ("mean class distance", self.distance_mean),
        ):
            if value is not None:
                lines.append(f"{label}: {value:.4f}")
        if self.distance_improvement is not None:
            lines.append(
                f"distance improvement: {self.distance_improvement * 100:+.2f}%"
            )
        if self.baseline:
            lines.append(f"finetune baseline: {self.baseline}")
        for p in self.phases:
            lines.append(f"phase {p.name}: {p.minutes:.2f} min")
        return "\n".join(lines) + "\n"


class RunState:
    """Mutable cross-phase state, backed by the artifact directory.

    Phases store their products here; anything missing in memory is loaded
    from disk when possible, so single-phase CLI invocations can resume a
    directory another invocation populated.
    """

    def __init__(self, config: ExperimentConfig, out: Path):
        self.config = config
        self.out = out
        self.dataset: ImageDataset | None = None
        self.model: torch.nn.Module | None = None
        self.model_meta: dict = {}
        self.codec = None  # (encoder, decoder)
        self.poison_spec: PoisonSpec | None = None
        self.poisoned_train: tuple[torch.Tensor, torch.Tensor] | None = None
        self.matrices: list = []
        self.matrix_paths: list[Path] = []

    def ensure_dataset(self) -> ImageDataset:
        if self.dataset is None:
            block = self.config.dataset
            if "path" not in block:
                raise ExperimentError("config has no dataset.path")
            self.dataset = load_dataset(
                block["path"],
                format=block.get("format", "cifar10-binary"),
                val_size=int(block.get("val_size", 2000)),
            )
        return self.dataset

    def ensure_model(self) -> torch.nn.Module:
        if self.model is None:
            path = self.out / "model"
            if not (path / "manifest.json").exists():
                raise ExperimentError(
                    "no subject model in memory or on disk; run the train phase"
                )
            dataset = self.ensure_dataset()
            probe = build_model(
                self.config.arch, dataset.n_classes, dataset.image_size,
                seed=self.config.seed,
            )
            self.model_meta = load_checkpoint(path, probe, kind="subject-model")
            probe.eval()
            self.model = probe
        return self.model

    def ensure_codec(self):
        if self.codec is None:
            path = self.out / "codec"
            if not path.exists():
                raise ExperimentError(
                    "no codec in memory or on disk; run the train-codec phase"
                )
            _, encoder, decoder = load_codec(path)
            self.codec = (encoder, decoder)
        return self.codec

    def ensure_poison_spec(self) -> PoisonSpec | None:
        if self.poison_spec is None:
            path = self.out / "poison.json"
            if path.exists():
                with open(path) as fh:
                    stored = json.load(fh)
                self.poison_spec = PoisonSpec.from_dict(stored["spec"])
        return self.poison_spec

    def train_split(self) -> tuple[torch.Tensor, torch.Tensor]:
        if self.poisoned_train is not None:
            return self.poisoned_train
        return self.ensure_dataset().train

    def budget_subset(self, fraction: float) -> tuple[torch.Tensor, torch.Tensor]:
        """Seeded clean-data subset for the defender (hardening, finetuning)."""
        images, labels = self.ensure_dataset().train
        count = max(1, int(round(images.shape[0] * fraction)))
        order = torch.randperm(
            images.shape[0], generator=make_rng(self.config.seed + 424243)
        )
        keep = order[:count].sort().values
        return images[keep], labels[keep]


def _phase_train(state: RunState, report: RunReport) -> dict:
    config = state.config
    dataset = state.ensure_dataset()
    block = config.train
    train_config = TrainConfig(
        epochs=int(block.get("epochs", 30)),
        batch_size=int(block.get("batch_size", 128)),
        lr=float(block.get("lr", 1e-3)),
        augment=bool(block.get("augment", True)),
        seed=config.seed,
    )
    model, result = train_model(
        config.arch, dataset, train_config, train_data=state.train_split()
    )
    state.model = model
    save_checkpoint(
        state.out / "model", model, kind="subject-model",
        meta={
            "arch": config.arch,
            "n_classes": dataset.n_classes,
            "image_size": dataset.image_size,
            "accuracy": result.accuracy,
        },
    )
    report.accuracy = result.accuracy
    metrics = {
        "accuracy": result.accuracy,
        "params": result.params,
        "epochs": result.epochs,
    }
    spec = state.ensure_poison_spec()
    if spec is not None:
        asr = eval_asr(model, *dataset.test, spec)
        report.asr_before_hardening = asr
        report.asr = asr
        metrics["asr"] = asr
    return metrics


def _phase_poison(state: RunState, report: RunReport) -> dict:
    config = state.config
    dataset = state.ensure_dataset()
    block = dict(config.poison)
    family = block.pop("family", None)
    if family is None:
        raise ExperimentError("poison phase needs poison.family")
    target = int(block.pop("target", 0))
    spec = default_spec(family, target=target, seed=int(block.pop("seed", config.seed)))
    if "rate" in block:
        spec = dataclasses.replace(spec, poison_rate=float(block.pop("rate")))
    if "label_mode" in block:
        spec = dataclasses.replace(spec, label_mode=block.pop("label_mode"))
    if "params" in block:
        spec = dataclasses.replace(spec, params=spec.params | dict(block.pop("params")))
    surrogate_epochs = int(block.pop("surrogate_epochs", 5))
    if block:
        raise ExperimentError(f"unknown poison keys {sorted(block)}")

    surrogate = None
    if family == "cleanlabel":
        surrogate = state.model
        if surrogate is None:
            surrogate, _ = train_model(
                config.arch, dataset,
                TrainConfig(epochs=surrogate_epochs, seed=config.seed + 9),
            )
    poisoned = poison(
        *dataset.train, spec, seed=spec.seed, model_for_perturb=surrogate
    )
    state.poison_spec = spec
    state.poisoned_train = poisoned.apply()
    manifest = poisoned.manifest()
    with open(state.out / "poison.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {
        "family": family,
        "poisoned_count": manifest["poisoned_count"],
        "target": spec.target,
    }


def _phase_train_codec(state: RunState, report: RunReport) -> dict:
    config = state.config
    dataset = state.ensure_dataset()
    block = config.train_codec
    width = int(block.get("width", 32))
    scheme = block.get("scheme", "gaussian")
    truncate_after = int(block.get("truncate_after", 1))
    clf, encoder, decoder = build_codec_pair(
        width=width,
        num_classes=dataset.n_classes,
        image_size=dataset.image_size,
        truncate_after=truncate_after,
        scheme=scheme,
        seed=config.seed,
    )
    # the codec trains on the defender's clean data, never the poisoned set
    images, labels = dataset.train
    train_encoder_classifier(
        clf, images, labels, *dataset.val,
        epochs=int(block.get("clf_epochs", 15)),
        batch_size=int(block.get("batch_size", 128)),
        rng=make_rng(config.seed + 31),
    )
    decoder.set_stats(collect_channel_stats(encoder, images))
    history = train_decoder(
        decoder, encoder, images,
        epochs=int(block.get("dec_epochs", 50)),
        batch_size=int(block.get("batch_size", 128)),
        rng=make_rng(config.seed + 32),
        val_images=dataset.val[0],
        mse_ceiling=float(block.get("mse_ceiling", 0.01)),
    )
    recon = heldout_mse(decoder, encoder, dataset.val[0], seed=config.seed + 33)
    save_codec(state.out / "codec", clf, decoder, truncate_after=truncate_after)
    state.codec = (encoder, decoder)
    clf_acc = classifier_accuracy(clf, *dataset.val)
    return {
        "scheme": scheme,
        "width": width,
        "encoder_val_accuracy": clf_acc,
        "reconstruction_mse": recon,
        "decoder_epochs": len([h for h in history if "epoch" in h]),
    }


def _protocol_from_block(block: dict, seed: int) -> MeasurementProtocol:
    kwargs = {}
    for name in (
        "samples_per_pair", "epochs", "trials", "batch_size", "grid", "kernel_size",
    ):
        if name in block:
            kwargs[name] = int(block[name])
    if "flip_threshold" in block:
        kwargs["flip_threshold"] = float(block["flip_threshold"])
    if "lr" in block:
        kwargs["lr"] = float(block["lr"])
    trials = kwargs.get("trials", 3)
    kwargs["seeds"] = [seed + t for t in range(trials)]
    return MeasurementProtocol(**kwargs)


def _phase_measure(state: RunState, report: RunReport) -> dict:
    config = state.config
    dataset = state.ensure_dataset()
    model = state.ensure_model()
    codecs = state.ensure_codec()
    block = config.measure
    protocol = _protocol_from_block(block, config.seed)
    pairs = None
    if "max_pairs" in block:
        pairs = sample_pairs(
            dataset.n_classes, int(block["max_pairs"]), seed=config.seed
        )
    matrix = measure_matrix(
        model, dataset.n_classes, protocol, codecs, dataset.train, pairs=pairs
    )
    state.matrices.append(matrix)
    matrix_dir = state.out / "matrices"
    matrix_dir.mkdir(exist_ok=True)
    path = matrix_dir / f"matrix-{len(list(matrix_dir.glob('matrix-*.json'))) + 1:03d}.json"
    baseline = state.matrices[0] if len(state.matrices) > 1 else None
    save_matrix(path, matrix, baseline=baseline)
    state.matrix_paths.append(path)
    report.distance_mean = matrix.mean_distance()
    metrics = {
        "mean_distance": matrix.mean_distance(),
        "pairs": len(matrix.pairs),
        "converged_pairs": len(matrix.valid_pairs()),
        "matrix": path.name,
    }
    if baseline is not None:
        improvement = relative_improvement(baseline, matrix)
        report.distance_improvement = improvement
        metrics["improvement_vs_first"] = improvement
    return metrics


def _phase_harden(state: RunState, report: RunReport) -> dict:
    config = state.config
    dataset = state.ensure_dataset()
    model = state.ensure_model()
    codecs = state.ensure_codec()
    block = config.harden
    hconfig = HardeningConfig(
        rounds=int(block.get("rounds", 50)),
        steps_per_round=int(block.get("steps_per_round", 20)),
        regen_epochs=int(block.get("regen_epochs", 30)),
        learning_rate=float(block.get("lr", 1e-3)),
        accuracy_floor=float(block.get("accuracy_floor", 0.04)),
        clean_fraction=float(block.get("clean_fraction", 0.5)),
        data_budget=float(block.get("data_budget", 0.05)),
        batch_size=int(block.get("batch_size", 32)),
        gen_samples=int(block.get("gen_samples", 64)),
        flip_threshold=float(block.get("flip_threshold", 0.9)),
        checkpoint_every=int(block.get("checkpoint_every", 0)),
        seed=config.seed,
    )
    subset = state.budget_subset(hconfig.data_budget)
    spec = state.ensure_poison_spec()
    asr_fn = None
    if spec is not None:
        test_images, test_labels = dataset.test
        asr_fn = lambda m: eval_asr(m, test_images, test_labels, spec)
    model, hreport = harden(
        model, codecs, subset, hconfig,
        val_data=dataset.val, asr_fn=asr_fn,
        out_dir=state.out / "hardening",
    )
    state.model = model
    save_checkpoint(
        state.out / "model-hardened", model, kind="subject-model",
        meta={
            "arch": config.arch,
            "n_classes": dataset.n_classes,
            "image_size": dataset.image_size,
            "accuracy": hreport.final_accuracy,
        },
    )
    return {
        "rounds": len(hreport.rounds),
        "initial_accuracy": hreport.initial_accuracy,
        "final_accuracy": hreport.final_accuracy,
        "aborted": hreport.aborted,
    }


def _phase_evaluate(state: RunState, report: RunReport) -> dict:
    config = state.config
    dataset = state.ensure_dataset()
    model = state.ensure_model()
    block = config.evaluate
    accuracy = classifier_accuracy(model, *dataset.test)
    eval_count = int(block.get("pgd_samples", 512))
    test_images, test_labels = dataset.test
    eval_images, eval_labels = test_images[:eval_count], test_labels[:eval_count]
    robustness = pgd_eval(
        model, eval_images, eval_labels,
        eps=float(block.get("eps", PGD_EPS)),
        steps=int(block.get("steps", PGD_STEPS)),
        seed=config.seed,
    )
    report.accuracy = accuracy
    report.robustness = robustness
    metrics = {"accuracy": accuracy, "robustness": robustness}
    spec = state.ensure_poison_spec()
    if spec is not None:
        asr = eval_asr(model, test_images, test_labels, spec)
        report.asr = asr
        metrics["asr"] = asr
    if block.get("finetune_baseline"):
        subset = state.budget_subset(float(block.get("data_budget", 0.05)))
        tuned = finetune_baseline(
            model, *subset,
            FinetuneConfig(
                epochs=int(block.get("finetune_epochs", 10)),
                lr=float(block.get("finetune_lr", 1e-4)),
                seed=config.seed,
            ),
        )
        baseline = {"accuracy": classifier_accuracy(tuned, *dataset.test)}
        if spec is not None:
            baseline["asr"] = eval_asr(tuned, test_images, test_labels, spec)
        report.baseline = baseline
        metrics["finetune_baseline"] = baseline
    return metrics


_PHASE_FNS = {
    "train": _phase_train,
    "poison": _phase_poison,
    "train-codec": _phase_train_codec,
    "measure": _phase_measure,
    "harden": _phase_harden,
    "evaluate": _phase_evaluate,
}


def run_experiment(
    config: ExperimentConfig, force: bool = False, progress=None
) -> RunReport:
    """Execute the configured phases in order and persist a RunReport.

    A phase failure stops the run; everything already produced stays on disk
    and the report carries the failed phase plus its error. A previously
    completed run of the identical config is refused unless `force`.
    """
    out = Path(config.out)
    report_path = out / "report.json"
    config_hash = config.config_hash()
    if report_path.exists() and not force:
        with open(report_path) as fh:
            previous = json.load(fh)
        if previous.get("config_hash") == config_hash and previous.get("complete"):
            raise ExperimentExists(
                f"{out} already holds a completed run of this exact config "
                f"({config_hash}); rerun with --force to redo it"
            )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(
            {"hash": config_hash, "name": config.name} | config.semantic_dict(),
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")

    state = RunState(config, out)
    report = RunReport(config_hash=config_hash, seed=config.seed)
    for phase in config.phases:
        if progress:
            progress(f"phase {phase}")
        start = time.time()
        try:
            metrics = _PHASE_FNS[phase](state, report)
        except Exception as exc:  # partial report, artifacts retained
            report.failed_phase = phase
            report.error = f"{type(exc).__name__}: {exc}"
            report.phases.append(
                PhaseRecord(phase, (time.time() - start) / 60, {"failed": True})
            )
            break
        report.phases.append(
            PhaseRecord(phase, (time.time() - start) / 60, metrics)
        )
    else:
        report.complete = True

    with open(report_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    (out / "report.txt").write_text(report.text())
    return report
