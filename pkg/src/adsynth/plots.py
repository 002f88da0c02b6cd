"""Figure rendering for reports and dataset statistics.

Uses the object-oriented matplotlib API (no pyplot state, no interactive
backend) so figures render identically in headless runs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

from matplotlib.figure import Figure

from .corpus import COMBINATIONS, DatasetStats
from .report import BINARY_ROWS, REPORT_LABELS, ReportCell

_BAR_COLORS = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


def save_report_figure(
    cells: Mapping[str, ReportCell],
    task: str,
    path: Path | str,
    class_labels: Mapping[int, str] | None = None,
) -> Path:
    """Grouped bar chart of metric values per combination, one group per
    report row."""
    labels = dict(REPORT_LABELS)
    if class_labels:
        labels.update(class_labels)
    columns = [combo for combo in COMBINATIONS if combo in cells]
    if task == "binary":
        row_labels = list(BINARY_ROWS)
        values = {
            combo: [
                cells[combo].per_class[1].precision,
                cells[combo].per_class[1].recall,
                cells[combo].per_class[1].f1,
                cells[combo].accuracy,
            ]
            for combo in columns
        }
    else:
        class_ids = sorted(cells[columns[0]].per_class)
        row_labels = [labels.get(cid, f"Class {cid}") for cid in class_ids] + ["Overall Accuracy"]
        values = {
            combo: [cells[combo].per_class[cid].f1 for cid in class_ids] + [cells[combo].accuracy]
            for combo in columns
        }

    fig = Figure(figsize=(max(7.0, 1.1 * len(row_labels)), 4.5))
    ax = fig.subplots()
    group_width = 0.8
    bar_width = group_width / max(len(columns), 1)
    for offset, combo in enumerate(columns):
        positions = [i - group_width / 2 + bar_width * (offset + 0.5) for i in range(len(row_labels))]
        ax.bar(positions, values[combo], width=bar_width, label=combo, color=_BAR_COLORS[offset % 4])
    ax.set_xticks(range(len(row_labels)))
    ax.set_xticklabels(row_labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1" if task != "binary" else "metric value")
    ax.set_title(f"{task} task: metric by training-data combination")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    return path


def save_distribution_figure(
    stats_by_tier: Mapping[str, DatasetStats],
    path: Path | str,
    class_labels: Mapping[int, str] | None = None,
) -> Path:
    """Grouped bar chart of per-category counts for each dataset tier."""
    labels = dict(REPORT_LABELS)
    if class_labels:
        labels.update(class_labels)
    class_ids = sorted({cid for stats in stats_by_tier.values() for cid in stats.counts})
    tiers = list(stats_by_tier)
    fig = Figure(figsize=(max(7.0, 1.0 * len(class_ids)), 4.5))
    ax = fig.subplots()
    group_width = 0.8
    bar_width = group_width / max(len(tiers), 1)
    for offset, tier in enumerate(tiers):
        counts = [stats_by_tier[tier].counts.get(cid, 0) for cid in class_ids]
        positions = [i - group_width / 2 + bar_width * (offset + 0.5) for i in range(len(class_ids))]
        ax.bar(positions, counts, width=bar_width, label=tier, color=_BAR_COLORS[offset % 4])
    ax.set_xticks(range(len(class_ids)))
    ax.set_xticklabels(
        [labels.get(cid, "Negative" if cid == 0 else f"Class {cid}") for cid in class_ids],
        rotation=30,
        ha="right",
        fontsize=8,
    )
    ax.set_ylabel("sentences")
    ax.set_title("category distribution by tier")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    return path
