"""Comparison-table rendering for the experiment matrix.

Rows are metrics (binary: positive-class P/R/F1 plus overall accuracy;
multiclass: one F1 row per category plus overall accuracy), columns are the
data combinations, and every non-baseline cell shows its value together with
the signed percent change against the gold-only baseline. Significant
overall-accuracy cells are starred.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import COMBINATIONS
from .evaluator import ClassMetrics, EvaluatorError, confusion, metrics, percent_change

__all__ = [
    "ReportCell",
    "MissingBaseline",
    "REPORT_LABELS",
    "COLUMN_TITLES",
    "BINARY_ROWS",
    "render_report",
    "cell_from_predictions",
    "cells_from_values_file",
]


class MissingBaseline(EvaluatorError):
    pass


# Display aliases for report rows; class identity is always the integer id,
# these strings are presentation only (falling back to schema titles or
# "Class N" for ids without an alias).
REPORT_LABELS: dict[int, str] = {
    1: "Cognitive impairment",
    2: "Notice/concern by others",
    3: "Requires assistance",
    4: "Physiological changes",
    5: "Cognitive assessment",
    6: "Cognitive intervention/therapy",
    7: "Diagnostic tests",
    8: "Coping strategy",
    9: "NPS",
}

COLUMN_TITLES: dict[str, str] = {
    "G": "Gold Only",
    "G+B": "+ Bronze",
    "G+S": "+ Silver",
    "G+B+S": "+ Bronze + Silver",
}

BINARY_ROWS = ("Precision (Positive)", "Recall (Positive)", "F-1(Positive)", "Overall Accuracy")


@dataclass(frozen=True)
class ReportCell:
    """Metric values for one (task, combination) cell.

    ``per_class`` is keyed by class id (binary uses id 1 for the positive
    class); ``significant`` flags the overall-accuracy comparison against the
    gold-only baseline.
    """

    per_class: Mapping[int, ClassMetrics]
    accuracy: float
    significant: bool | None = None


def cell_from_predictions(
    predictions: Sequence[int],
    golds: Sequence[int],
    task: str,
    significant: bool | None = None,
) -> ReportCell:
    """Compute a report cell from raw predictions.

    Binary labels live in {0, 1}; multiclass labels in 1..9 (mapped to
    matrix indices internally).
    """
    if task == "binary":
        matrix = confusion(predictions, golds, k=2)
        evaluated = metrics(matrix)
        per_class = {0: evaluated.per_class[0], 1: evaluated.per_class[1]}
    else:
        matrix = confusion([p - 1 for p in predictions], [g - 1 for g in golds], k=9)
        evaluated = metrics(matrix)
        per_class = {index + 1: cm for index, cm in evaluated.per_class.items()}
    return ReportCell(per_class=per_class, accuracy=evaluated.accuracy, significant=significant)


def render_report(
    cells: Mapping[str, ReportCell],
    task: str,
    sep: str | None = None,
    class_labels: Mapping[int, str] | None = None,
) -> str:
    """Render the combination-comparison table for one task.

    ``sep=None`` gives an aligned human-readable table; a separator string
    (e.g. ``"\\t"``) gives the delimited variant. Deltas are computed from
    the stored (unrounded) metric values; values display at 2 decimals.
    """
    if "G" not in cells:
        raise MissingBaseline("gold-only baseline cell is required")
    labels = dict(REPORT_LABELS)
    if class_labels:
        labels.update(class_labels)
    columns = [combo for combo in COMBINATIONS if combo in cells]
    baseline = cells["G"]
    class_ids = sorted(baseline.per_class) if task != "binary" else [1]

    def rows_for(cell: ReportCell) -> list[tuple[str, float, bool]]:
        """(label, value, is_accuracy_row) triples in display order."""
        if task == "binary":
            positive = cell.per_class[1]
            rows = [
                (BINARY_ROWS[0], positive.precision, False),
                (BINARY_ROWS[1], positive.recall, False),
                (BINARY_ROWS[2], positive.f1, False),
            ]
        else:
            rows = [
                (labels.get(cid, f"Class {cid}"), cell.per_class[cid].f1, False) for cid in class_ids
            ]
        rows.append(("Overall Accuracy", cell.accuracy, True))
        return rows

    def fmt(combo: str, value: float, baseline_value: float, cell: ReportCell, accuracy_row: bool) -> str:
        if combo == "G":
            return f"{value:.2f}"
        change = percent_change(baseline_value, value)
        star = "*" if accuracy_row and cell.significant else ""
        return f"{value:.2f} ({change.rendered}{star})"

    header = [""] + [COLUMN_TITLES[combo] for combo in columns]
    table: list[list[str]] = [header]
    per_combo_rows = {combo: rows_for(cells[combo]) for combo in columns}
    for row_index, (label, baseline_value, accuracy_row) in enumerate(rows_for(baseline)):
        row = [label]
        for combo in columns:
            value = per_combo_rows[combo][row_index][1]
            row.append(fmt(combo, value, baseline_value, cells[combo], accuracy_row))
        table.append(row)

    if sep is not None:
        return "\n".join(sep.join(row) for row in table) + "\n"
    widths = [max(len(row[col]) for row in table) for col in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[idx]) for idx, cell in enumerate(row)).rstrip() for row in table]
    return "\n".join(lines) + "\n"


def cells_from_values_file(path: Path | str) -> dict[str, dict[str, ReportCell]]:
    """Load report cells from a JSON values file.

    Layout: ``{"binary": {"G": {"accuracy": 0.9, "significant": false,
    "per_class": {"1": {"precision": ..., "recall": ..., "f1": ...}}}, ...},
    "multiclass": {...}}``. Used to re-render tables from published or
    externally computed metric values.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    out: dict[str, dict[str, ReportCell]] = {}
    for task, combos in data.items():
        cells: dict[str, ReportCell] = {}
        for combo, payload in combos.items():
            per_class = {
                int(class_id): ClassMetrics(
                    precision=values.get("precision", 0.0),
                    recall=values.get("recall", 0.0),
                    f1=values.get("f1", 0.0),
                    support=values.get("support", 0),
                )
                for class_id, values in payload.get("per_class", {}).items()
            }
            cells[combo] = ReportCell(
                per_class=per_class,
                accuracy=payload["accuracy"],
                significant=payload.get("significant"),
            )
        out[task] = cells
    return out
