"""Metrics, baseline deltas, paired significance testing, and the human
quality-review workflow."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import LabeledSentence

__all__ = [
    "ConfusionMatrix",
    "ClassMetrics",
    "EvalMetrics",
    "PercentChange",
    "SignificanceResult",
    "ReviewRow",
    "ReviewSheet",
    "ReviewSummary",
    "ERROR_TYPES",
    "confusion",
    "metrics",
    "percent_change",
    "significance_test",
    "mcnemar_exact",
    "mcnemar_chi2",
    "sample_for_review",
    "review_accuracy",
    "write_review_sheet",
    "read_review_sheet",
]


class EvaluatorError(ValueError):
    pass


class LengthMismatch(EvaluatorError):
    pass


class LabelOutOfRange(EvaluatorError):
    pass


class EmptyMatrix(EvaluatorError):
    pass


class ZeroBaseline(EvaluatorError):
    pass


class InsufficientData(EvaluatorError):
    pass


class IncompleteSheet(EvaluatorError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts with rows = gold labels and columns = predictions."""

    counts: tuple[tuple[int, ...], ...]

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)


def confusion(predictions: Sequence[int], golds: Sequence[int], k: int) -> ConfusionMatrix:
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(golds)} golds")
    counts = [[0] * k for _ in range(k)]
    for pred, gold in zip(predictions, golds):
        if not (0 <= gold < k) or not (0 <= pred < k):
            raise LabelOutOfRange(f"pair ({gold}, {pred}) outside 0..{k - 1}")
        counts[gold][pred] += 1
    return ConfusionMatrix(tuple(tuple(row) for row in counts))


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    # Names of metrics that had a zero denominator and were reported as 0.
    undefined: tuple[str, ...] = ()


@dataclass(frozen=True)
class EvalMetrics:
    per_class: Mapping[int, ClassMetrics]
    accuracy: float
    total: int


def metrics(matrix: ConfusionMatrix) -> EvalMetrics:
    """One-vs-rest precision/recall/F1 per class index plus overall accuracy.

    Zero-denominator values are reported as 0 and flagged."""
    if matrix.total == 0:
        raise EmptyMatrix("confusion matrix has no observations")
    per_class: dict[int, ClassMetrics] = {}
    for index in range(matrix.k):
        tp = matrix.counts[index][index]
        predicted = sum(matrix.counts[row][index] for row in range(matrix.k))
        actual = sum(matrix.counts[index])
        undefined: list[str] = []
        precision = recall = f1 = 0.0
        if predicted:
            precision = tp / predicted
        else:
            undefined.append("precision")
        if actual:
            recall = tp / actual
        else:
            undefined.append("recall")
        if precision + recall:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            undefined.append("f1")
        per_class[index] = ClassMetrics(precision, recall, f1, support=actual, undefined=tuple(undefined))
    accuracy = sum(matrix.counts[i][i] for i in range(matrix.k)) / matrix.total
    return EvalMetrics(per_class=per_class, accuracy=accuracy, total=matrix.total)


def round_half_up(value: float, places: int = 2) -> float:
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class PercentChange:
    value: float  # signed, rounded half-up to 2 decimals
    rendered: str


def percent_change(baseline: float, value: float) -> PercentChange:
    """Signed percent change vs baseline, rendered like ``20.55%↑``.

    Computed from the unrounded inputs, then rounded half-up to two decimals
    for display; equality renders as ``0%``.
    """
    if baseline <= 0:
        raise ZeroBaseline(f"baseline must be > 0, got {baseline}")
    pct = round_half_up(100.0 * (value - baseline) / baseline)
    if pct == 0:
        return PercentChange(0.0, "0%")
    arrow = "↑" if pct > 0 else "↓"
    return PercentChange(pct, f"{abs(pct):.2f}%{arrow}")


@dataclass(frozen=True)
class SignificanceResult:
    p_value: float
    significant: bool
    n01: int  # items a got wrong and b got right
    n10: int  # items a got right and b got wrong
    method: str


def mcnemar_exact(n01: int, n10: int) -> float:
    """Two-sided exact binomial p-value over the discordant pairs."""
    n = n01 + n10
    if n == 0:
        return 1.0
    k = max(n01, n10)
    tail = sum(math.comb(n, i) for i in range(k, n + 1))
    return min(1.0, 2.0 * tail / 2.0**n)


def mcnemar_chi2(n01: int, n10: int) -> float:
    """Continuity-corrected chi-square approximation (1 df)."""
    n = n01 + n10
    if n == 0:
        return 1.0
    stat = max(abs(n01 - n10) - 1.0, 0.0) ** 2 / n
    return math.erfc(math.sqrt(stat / 2.0))


def _randomization_p(n01: int, n10: int, iterations: int, seed: int) -> float:
    rng = random.Random(seed)
    observed = abs(n01 - n10)
    n = n01 + n10
    hits = 0
    for _ in range(iterations):
        flips = sum(1 for _ in range(n) if rng.random() < 0.5)
        if abs(flips - (n - flips)) >= observed:
            hits += 1
    return (hits + 1) / (iterations + 1)


def significance_test(
    preds_a: Sequence[int],
    preds_b: Sequence[int],
    golds: Sequence[int],
    alpha: float = 0.05,
    method: str = "auto",
    iterations: int = 10000,
    seed: int = 0,
) -> SignificanceResult:
    """Paired test on per-item correctness indicators.

    ``auto`` uses the exact binomial McNemar while either discordant cell is
    small (< 25) and the continuity-corrected chi-square otherwise;
    ``randomization`` runs a seeded approximate-randomization test instead.
    """
    if not (len(preds_a) == len(preds_b) == len(golds)):
        raise LengthMismatch(
            f"paired test needs equal lengths, got {len(preds_a)}/{len(preds_b)}/{len(golds)}"
        )
    n01 = sum(1 for a, b, g in zip(preds_a, preds_b, golds) if a != g and b == g)
    n10 = sum(1 for a, b, g in zip(preds_a, preds_b, golds) if a == g and b != g)
    if method == "auto":
        method = "exact" if min(n01, n10) < 25 else "chi2"
    if method == "exact":
        p = mcnemar_exact(n01, n10)
    elif method == "chi2":
        p = mcnemar_chi2(n01, n10)
    elif method == "randomization":
        p = _randomization_p(n01, n10, iterations, seed)
    else:
        raise EvaluatorError(f"unknown method {method!r}")
    return SignificanceResult(p_value=p, significant=p < alpha, n01=n01, n10=n10, method=method)


# --- human quality review ----------------------------------------------------

ERROR_TYPES = ("over-inference", "negation-miss", "other")


@dataclass
class ReviewRow:
    sentence: str
    class_id: int
    tier: str
    correct: bool | None = None
    error_type: str | None = None
    comment: str = ""


@dataclass
class ReviewSheet:
    rows: list[ReviewRow]
    seed: int
    source_size: int


@dataclass(frozen=True)
class ReviewSummary:
    accuracy: float
    histogram: Mapping[str, int]
    n: int


def sample_for_review(dataset: Sequence[LabeledSentence], n: int = 100, seed: int = 0) -> ReviewSheet:
    """Uniform seeded sample without replacement, emitted as a fillable sheet."""
    if len(dataset) < n:
        raise InsufficientData(f"need {n} items, dataset has {len(dataset)}")
    rng = random.Random(seed)
    sampled = rng.sample(list(dataset), n)
    rows = [ReviewRow(sentence=item.text, class_id=item.class_id, tier=item.tier) for item in sampled]
    return ReviewSheet(rows=rows, seed=seed, source_size=len(dataset))


def review_accuracy(sheet: ReviewSheet) -> ReviewSummary:
    """Proportion judged correct (2 decimals) plus an error-type histogram."""
    if not sheet.rows:
        raise IncompleteSheet("sheet has no rows")
    histogram = {error_type: 0 for error_type in ERROR_TYPES}
    correct = 0
    for idx, row in enumerate(sheet.rows):
        if row.correct is None:
            raise IncompleteSheet(f"row {idx}: verdict not filled")
        if row.correct:
            correct += 1
            continue
        if row.error_type not in ERROR_TYPES:
            raise IncompleteSheet(
                f"row {idx}: incorrect items need an error_type from {ERROR_TYPES}, got {row.error_type!r}"
            )
        histogram[row.error_type] += 1
    histogram = {k: v for k, v in histogram.items() if v}
    return ReviewSummary(
        accuracy=round_half_up(correct / len(sheet.rows)), histogram=histogram, n=len(sheet.rows)
    )


def write_review_sheet(sheet: ReviewSheet, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in sheet.rows:
            fh.write(
                json.dumps(
                    {
                        "sentence": row.sentence,
                        "class_id": row.class_id,
                        "tier": row.tier,
                        "correct": row.correct,
                        "error_type": row.error_type,
                        "comment": row.comment,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def read_review_sheet(path: Path | str, seed: int = 0) -> ReviewSheet:
    rows: list[ReviewRow] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            rows.append(
                ReviewRow(
                    sentence=record["sentence"],
                    class_id=int(record["class_id"]),
                    tier=record["tier"],
                    correct=record.get("correct"),
                    error_type=record.get("error_type"),
                    comment=record.get("comment") or "",
                )
            )
    return ReviewSheet(rows=rows, seed=seed, source_size=len(rows))
