"""Result tables and plots.

The method table mirrors the reference column layout: Method, Acc., Rob.,
Time, Dist., Increase, ADeg., RDeg. Every row is one run report; degradation
columns compare against the first row (the natural/no-defense arm).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from ..distance.metric import DistanceMatrix
from .experiment import RunReport

TABLE_COLUMNS = ("Method", "Acc.", "Rob.", "Time", "Dist.", "Increase", "ADeg.", "RDeg.")


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{value * 100:.2f}%"


def _signed_pct(value: float | None) -> str:
    return "-" if value is None else f"{value * 100:+.2f}%"


def _minutes(value: float | None) -> str:
    return "-" if value is None else f"{value:.1f}m"


def _dist(value: float | None) -> str:
    return "-" if value is None else f"{value:.4f}"


def method_rows(named_reports: list[tuple[str, RunReport]]) -> list[dict]:
    """One table row per (method name, report); the first row is the anchor
    the degradation columns compare against."""
    if not named_reports:
        raise ValueError("no reports to tabulate")
    anchor = named_reports[0][1]
    rows = []
    for index, (name, report) in enumerate(named_reports):
        total_minutes = sum(p.minutes for p in report.phases)
        adeg = rdeg = None
        if index > 0:
            if anchor.accuracy is not None and report.accuracy is not None:
                adeg = anchor.accuracy - report.accuracy
            if anchor.robustness is not None and report.robustness is not None:
                rdeg = anchor.robustness - report.robustness
        rows.append({
            "Method": name,
            "Acc.": _pct(report.accuracy),
            "Rob.": _pct(report.robustness),
            "Time": _minutes(total_minutes),
            "Dist.": _dist(report.distance_mean),
            "Increase": _signed_pct(report.distance_improvement),
            "ADeg.": _pct(adeg),
            "RDeg.": _pct(rdeg),
        })
    return rows


def render_table(rows: list[dict]) -> str:
    widths = {c: len(c) for c in TABLE_COLUMNS}
    for row in rows:
        for c in TABLE_COLUMNS:
            widths[c] = max(widths[c], len(str(row.get(c, "-"))))
    header = "  ".join(c.ljust(widths[c]) for c in TABLE_COLUMNS)
    rule = "  ".join("-" * widths[c] for c in TABLE_COLUMNS)
    lines = [header, rule]
    for row in rows:
        lines.append(
            "  ".join(str(row.get(c, "-")).ljust(widths[c]) for c in TABLE_COLUMNS)
        )
    return "\n".join(lines) + "\n"


def plot_distance_bars(
    before: DistanceMatrix,
    after: DistanceMatrix | None,
    path: str | Path,
) -> Path:
    """Per-pair distance bars, optionally before/after side by side."""
    pairs = sorted(before.pairs)
    labels = [f"{v}->{t}" for v, t in pairs]
    x = range(len(pairs))
    fig, ax = plt.subplots(figsize=(max(6, len(pairs) * 0.5), 4))
    width = 0.4 if after is not None else 0.8
    ax.bar(
        [i - width / 2 if after is not None else i for i in x],
        [before.pairs[p].distance for p in pairs],
        width=width, label="before",
    )
    if after is not None:
        ax.bar(
            [i + width / 2 for i in x],
            [after.pairs[p].distance if p in after.pairs else 0.0 for p in pairs],
            width=width, label="after",
        )
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("feature distance")
    ax.set_xlabel("class pair")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_asr_bars(values: dict[str, float], path: str | Path) -> Path:
    """Attack-success-rate comparison bars (e.g. before/after removal)."""
    names = list(values)
    fig, ax = plt.subplots(figsize=(max(4, len(names) * 1.2), 4))
    ax.bar(names, [values[n] * 100 for n in names])
    ax.set_ylabel("attack success rate (%)")
    ax.set_ylim(0, 100)
    for i, name in enumerate(names):
        ax.text(i, values[name] * 100 + 1, f"{values[name] * 100:.1f}",
                ha="center", fontsize=9)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path
