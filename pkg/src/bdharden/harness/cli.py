"""Command-line front end.

One subcommand per pipeline phase plus `generate` (single-pair backdoor),
`report` (tables and plots from finished runs), and `make-data` (synthetic
dataset). Global flags work both before and after the subcommand:
--config PATH, --seed N, --out DIR, --force.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..backdoor.generator import GenConfig, generate_backdoor, save_generator, write_trace
from ..codec.checkpoint import CheckpointError
from ..distance.metric import load_matrix
from ..hardening.schedule import class_samples
from .data import DatasetError, make_shape_dataset
from .experiment import (
    ExperimentConfig,
    ExperimentError,
    ExperimentExists,
    RunReport,
    RunState,
    run_experiment,
)
from .report import method_rows, plot_asr_bars, plot_distance_bars, render_table

PHASE_COMMANDS = ("train-codec", "train", "poison", "measure", "harden", "evaluate")


def _add_global_flags(parser: argparse.ArgumentParser, root: bool) -> None:
    # subcommand copies suppress their defaults so they only override the
    # root-level values when actually typed after the subcommand
    kwargs = {} if root else {"default": argparse.SUPPRESS}
    parser.add_argument("--config", metavar="PATH", default=None if root else argparse.SUPPRESS,
                        help="experiment config file (structured key-value text)")
    parser.add_argument("--seed", type=int, metavar="N", **kwargs,
                        help="override the config seed")
    parser.add_argument("--out", metavar="DIR", **kwargs,
                        help="override the config output directory")
    parser.add_argument("--force", action="store_true", **kwargs,
                        help="redo a completed run with the identical config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bdharden",
        description="backdoor generation, class-distance measurement, and hardening",
    )
    _add_global_flags(parser, root=True)
    parser.set_defaults(seed=None, out=None, force=False)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, doc in (
        ("train-codec", "train the frozen encoder and its decoder"),
        ("train", "train the subject model"),
        ("poison", "poison the training split per the config"),
        ("measure", "measure the class-distance matrix"),
        ("harden", "run adversarial hardening"),
        ("evaluate", "clean accuracy, robustness, and attack success rate"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_global_flags(p, root=False)

    p = sub.add_parser("generate", help="generate one victim->target backdoor")
    _add_global_flags(p, root=False)
    p.add_argument("--victim", type=int, required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--samples", type=int, default=100)

    p = sub.add_parser("report", help="render tables and plots from run reports")
    _add_global_flags(p, root=False)
    p.add_argument("runs", nargs="*", help="run directories holding report.json")
    p.add_argument("--names", nargs="*", default=None,
                   help="method names, one per run directory")

    p = sub.add_parser("make-data", help="synthesize the shape dataset")
    _add_global_flags(p, root=False)
    p.add_argument("--train-count", type=int, default=10000)
    p.add_argument("--test-count", type=int, default=2000)

    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        try:
            config = ExperimentConfig.from_yaml(args.config)
        except FileNotFoundError:
            raise ExperimentError(f"config file {args.config} not found") from None
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out = args.out
    return config


def _cmd_phase(args: argparse.Namespace) -> int:
    config = _load_config(args)
    config.phases = [args.command]
    report = run_experiment(config, force=args.force, progress=_progress)
    print(report.text(), end="")
    return 0 if report.complete else 1


def _cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    state = RunState(config, Path(config.out))
    dataset = state.ensure_dataset()
    model = state.ensure_model()
    encoder, decoder = state.ensure_codec()
    samples = class_samples(
        *dataset.train, args.victim, args.samples, config.seed
    )
    result = generate_backdoor(
        model, encoder, decoder, samples, args.target,
        config=GenConfig(epochs=args.epochs, seed=config.seed),
        victim=args.victim,
    )
    out = Path(config.out) / "generators" / f"v{args.victim}-to-{args.target}"
    save_generator(out, result)
    write_trace(out / "trace.csv", result.trace)
    print(
        f"victim {args.victim} -> target {args.target}: "
        f"flip {result.flip_rate:.4f}, distance {result.content_distance:.6f}, "
        f"converged {result.converged}"
    )
    print(f"saved to {out}")
    return 0 if result.converged else 1


def _cmd_report(args: argparse.Namespace) -> int:
    run_dirs = [Path(r) for r in args.runs]
    if not run_dirs and args.out:
        run_dirs = [Path(args.out)]
    if not run_dirs:
        print("report: no run directories given", file=sys.stderr)
        return 2
    names = args.names or [d.name for d in run_dirs]
    if len(names) != len(run_dirs):
        print("report: need one name per run directory", file=sys.stderr)
        return 2
    reports = []
    for name, d in zip(names, run_dirs):
        path = d / "report.json"
        if not path.exists():
            print(f"report: no report.json under {d}", file=sys.stderr)
            return 2
        with open(path) as fh:
            reports.append((name, RunReport.from_dict(json.load(fh))))
    table = render_table(method_rows(reports))
    print(table, end="")
    out = Path(args.out) if args.out else run_dirs[0]
    out.mkdir(parents=True, exist_ok=True)
    (out / "report-table.txt").write_text(table)

    plot_dir = out / "plots"
    matrices = sorted((run_dirs[0] / "matrices").glob("matrix-*.json"))
    if matrices:
        before = load_matrix(matrices[0])
        after = load_matrix(matrices[-1]) if len(matrices) > 1 else None
        for ext in ("png", "svg"):
            plot_distance_bars(before, after, plot_dir / f"distances.{ext}")
    asr_values = {}
    for name, report in reports:
        if report.asr_before_hardening is not None:
            asr_values[f"{name} before"] = report.asr_before_hardening
        if report.asr is not None:
            asr_values[name if report.asr_before_hardening is None
                       else f"{name} after"] = report.asr
    if asr_values:
        for ext in ("png", "svg"):
            plot_asr_bars(asr_values, plot_dir / f"asr.{ext}")
    return 0


def _cmd_make_data(args: argparse.Namespace) -> int:
    out = args.out or "data/shapes"
    seed = args.seed if args.seed is not None else 7
    path = make_shape_dataset(
        out, n_train=args.train_count, n_test=args.test_count, seed=seed
    )
    print(f"wrote {args.train_count} train / {args.test_count} test records to {path}")
    return 0


def _progress(message: str) -> None:
    print(message, flush=True)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in PHASE_COMMANDS:
            return _cmd_phase(args)
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_make_data(args)
    except ExperimentExists as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 3
    except (ExperimentError, DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
