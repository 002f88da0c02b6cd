"""Canonical dataset construction: normalization, deduplication, stratified
splits, negative sampling, descriptive statistics, and tier combination."""

from __future__ import annotations

import json
import logging
import math
import random
import re
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .textproc import (
    content_token_count,
    default_stop_words,
    normalize,
    segment_sentences,
    token_count,
)

__all__ = [
    "LabeledSentence",
    "DatasetSplit",
    "DatasetStats",
    "TrainingStage",
    "COMBINATIONS",
    "normalize",
    "token_count",
    "deduplicate",
    "split",
    "sample_negatives",
    "stats",
    "combine",
    "looks_like_table_line",
    "render_stats_table",
    "read_labeled_jsonl",
    "write_labeled_jsonl",
]

log = logging.getLogger(__name__)

TIERS = ("gold", "silver", "bronze", "negative")
COMBINATIONS = ("G", "G+B", "G+S", "G+B+S")


class CorpusError(ValueError):
    pass


class EmptyInput(CorpusError):
    pass


class InsufficientPool(CorpusError):
    pass


class MissingTier(CorpusError):
    pass


@dataclass(frozen=True)
class LabeledSentence:
    text: str
    class_id: int
    tier: str
    provenance: Mapping[str, object] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError("labeled sentence text is empty")
        if not 0 <= self.class_id <= 9:
            raise CorpusError(f"class_id {self.class_id} outside 0..9")
        if self.tier not in TIERS:
            raise CorpusError(f"unknown tier {self.tier!r}")
        if (self.class_id == 0) != (self.tier == "negative"):
            raise CorpusError("class_id 0 is reserved for (and required by) the negative tier")


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[LabeledSentence, ...]
    validation: tuple[LabeledSentence, ...]
    test: tuple[LabeledSentence, ...]
    seed: int


@dataclass(frozen=True)
class DatasetStats:
    counts: Mapping[int, int]
    total: int
    mean_length: float
    sd_length: float
    empty: bool = False


class TrainingStage(NamedTuple):
    name: str
    items: tuple[LabeledSentence, ...]


def deduplicate(items: Sequence[LabeledSentence]) -> list[LabeledSentence]:
    """Keep the first occurrence per normalized text.

    A repeated text carrying a different class id is a labeling conflict: the
    first item wins and the conflict is logged.
    """
    seen: dict[str, LabeledSentence] = {}
    kept: list[LabeledSentence] = []
    for item in items:
        key = normalize(item.text)
        prior = seen.get(key)
        if prior is None:
            seen[key] = item
            kept.append(item)
        elif prior.class_id != item.class_id:
            log.warning(
                "duplicate sentence with conflicting classes (%d kept, %d dropped): %r",
                prior.class_id,
                item.class_id,
                key,
            )
    return kept


def split(
    items: Sequence[LabeledSentence],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Seeded shuffle followed by a stratified-by-class partition.

    Within each class the split sizes are floor(ratio * n) with the remainder
    handed out train-first (train, then validation, then test).
    """
    if not items:
        raise EmptyInput("nothing to split")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise CorpusError(f"ratios {ratios} do not sum to 1")
    rng = random.Random(seed)
    shuffled = list(items)
    rng.shuffle(shuffled)
    by_class: dict[int, list[LabeledSentence]] = {}
    for item in shuffled:
        by_class.setdefault(item.class_id, []).append(item)

    train: list[LabeledSentence] = []
    val: list[LabeledSentence] = []
    test: list[LabeledSentence] = []
    for class_id in sorted(by_class):
        members = by_class[class_id]
        n = len(members)
        # Epsilon guards against float noise on exact multiples (e.g. 0.3*10).
        sizes = [int(math.floor(ratio * n + 1e-9)) for ratio in ratios]
        remainder = n - sum(sizes)
        for slot in range(remainder):
            sizes[slot % 3] += 1
        train.extend(members[: sizes[0]])
        val.extend(members[sizes[0] : sizes[0] + sizes[1]])
        test.extend(members[sizes[0] + sizes[1] :])
    rng.shuffle(train)
    rng.shuffle(val)
    rng.shuffle(test)
    return DatasetSplit(tuple(train), tuple(val), tuple(test), seed)


_CHECKBOX = re.compile(r"\[\s*[xX ]?\s*\]|[☐☑☒□▢]")
_KEY_VALUE = re.compile(r"\S+\s*:\s*\S+")


def looks_like_table_line(text: str) -> bool:
    """Heuristic for table/form/questionnaire lines.

    Flags lines dominated by delimiter characters, containing checkbox
    glyphs, ruled with underscore/dash runs, split into tab columns, or made
    of repeated key:value fields.
    """
    stripped = text.strip()
    if not stripped:
        return True
    if _CHECKBOX.search(stripped):
        return True
    if "\t" in stripped and stripped.count("\t") >= 2:
        return True
    if re.search(r"[_]{3,}|[-=.]{5,}", stripped):
        return True
    delim = sum(stripped.count(c) for c in "|+*#~")
    if delim >= 2 or (delim >= 1 and len(stripped) < 20):
        return True
    if len(_KEY_VALUE.findall(stripped)) >= 3 and stripped.count(":") >= 3:
        return True
    non_alnum = sum(1 for c in stripped if not (c.isalnum() or c.isspace()))
    return non_alnum / len(stripped) > 0.3


def sample_negatives(
    pool_notes: Sequence,
    positives: Sequence[LabeledSentence],
    ratio: float = 5.0,
    seed: int = 0,
    stop_words: frozenset[str] | None = None,
    min_content_tokens: int = 5,
) -> list[LabeledSentence]:
    """Draw negative sentences from a note pool at ``ratio`` negatives per
    positive.

    Candidates are pool sentences that do not share a normalized text with
    any positive, keep at least ``min_content_tokens`` tokens after removing
    punctuation and stop words, and do not look like table/form lines.
    """
    stop = default_stop_words() if stop_words is None else stop_words
    positive_norms = {normalize(p.text) for p in positives}
    eligible: list[LabeledSentence] = []
    seen: set[str] = set()
    for note in pool_notes:
        for sentence in segment_sentences(note.text):
            if looks_like_table_line(sentence):
                continue
            if content_token_count(sentence, stop) < min_content_tokens:
                continue
            norm = normalize(sentence)
            if norm in positive_norms or norm in seen:
                continue
            seen.add(norm)
            eligible.append(
                LabeledSentence(sentence, 0, "negative", {"note_id": note.note_id, "origin": note.origin})
            )
    required = int(round(ratio * len(positives)))
    if len(eligible) < required:
        raise InsufficientPool(f"need {required} negatives, pool yields {len(eligible)}")
    rng = random.Random(seed)
    return rng.sample(eligible, required)


def stats(items: Sequence[LabeledSentence]) -> DatasetStats:
    """Per-category counts plus mean and sample (n-1) SD of token lengths."""
    counts: dict[int, int] = {}
    for item in items:
        counts[item.class_id] = counts.get(item.class_id, 0) + 1
    if not items:
        return DatasetStats(counts={}, total=0, mean_length=0.0, sd_length=0.0, empty=True)
    lengths = [token_count(item.text) for item in items]
    mean = statistics.fmean(lengths)
    sd = statistics.stdev(lengths) if len(lengths) > 1 else 0.0
    return DatasetStats(counts=dict(sorted(counts.items())), total=len(items), mean_length=mean, sd_length=sd)


def render_stats_table(
    dataset_stats: DatasetStats,
    labels: Mapping[int, str] | None = None,
    sep: str | None = None,
) -> str:
    """Render category counts in the distribution-table layout: one row per
    category, a Total row, and an ``Avg length +/- SD (tokens)`` row.

    ``sep=None`` yields an aligned text table; pass e.g. ``"\\t"`` for a
    delimited one.
    """
    labels = labels or {}
    rows: list[tuple[str, str]] = []
    for class_id, count in dataset_stats.counts.items():
        if class_id == 0:
            name = labels.get(0, "Negative")
        else:
            name = labels.get(class_id, f"Class {class_id}")
        rows.append((name, str(count)))
    rows.append(("Total", str(dataset_stats.total)))
    avg = f"{dataset_stats.mean_length:.2f} +/- {dataset_stats.sd_length:.2f}"
    if dataset_stats.empty:
        avg += " (empty)"
    rows.append(("Avg length +/- SD (tokens)", avg))
    if sep is not None:
        return "\n".join(sep.join(row) for row in rows) + "\n"
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"


def combine(
    gold: DatasetSplit,
    combination: str,
    bronze: Sequence[LabeledSentence] | None = None,
    silver: Sequence[LabeledSentence] | None = None,
) -> list[TrainingStage]:
    """Build the ordered training stages for a data combination.

    The synthetic stage (bronze, silver, or their deduplicated union)
    precedes the gold stage; validation and test always come from the gold
    split and are not part of the stages.
    """
    if combination not in COMBINATIONS:
        raise CorpusError(f"unknown combination {combination!r} (expected one of {COMBINATIONS})")
    stages: list[TrainingStage] = []
    need_bronze = "B" in combination
    need_silver = "S" in combination
    if need_bronze and not bronze:
        raise MissingTier("combination requires bronze data")
    if need_silver and not silver:
        raise MissingTier("combination requires silver data")
    if need_bronze and need_silver:
        merged = deduplicate(list(bronze) + list(silver))
        stages.append(TrainingStage("bronze+silver", tuple(merged)))
    elif need_bronze:
        stages.append(TrainingStage("bronze", tuple(bronze)))
    elif need_silver:
        stages.append(TrainingStage("silver", tuple(silver)))
    stages.append(TrainingStage("gold", tuple(gold.train)))
    return stages


def to_binary(items: Iterable[LabeledSentence]) -> list[LabeledSentence]:
    """Map sign/symptom sentences to the positive class (1); negatives stay 0."""
    return [item if item.class_id in (0, 1) else replace(item, class_id=1) for item in items]


def write_labeled_jsonl(path: Path | str, items: Iterable[LabeledSentence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            record = {
                "text": item.text,
                "class_id": item.class_id,
                "tier": item.tier,
                "provenance": dict(item.provenance),
            }
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_labeled_jsonl(path: Path | str) -> list[LabeledSentence]:
    items: list[LabeledSentence] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                items.append(
                    LabeledSentence(
                        text=record["text"],
                        class_id=int(record["class_id"]),
                        tier=record["tier"],
                        provenance=record.get("provenance", {}),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise CorpusError(f"{path}:{line_no}: bad labeled-sentence record: {exc}") from exc
    return items
