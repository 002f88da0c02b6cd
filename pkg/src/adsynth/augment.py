"""The two synthesis pipelines.

Silver (data-to-label): annotate supplied notes with the guideline-driven
prompt, then keep only annotations confirmed by a chain-of-thought
verification pass. Bronze (label-to-data): generate synthetic annotated
notes from the guideline alone until per-category quotas are met, with a
PHI screen on every emitted sentence.

Both pipelines are deterministic functions of (inputs, transcript store,
seed) when the gateway runs in replay mode.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from . import prompts
from .corpus import LabeledSentence
from .gateway import CompletionRequest, Gateway, GatewayError
from .prompts import AnnotationItem, ParseError
from .taxonomy import GuidelineSchema, category_by_id
from .textproc import segment_sentences, squash_ws

__all__ = [
    "SourceNote",
    "AnnotationRecord",
    "QuotaPlan",
    "PipelineConfig",
    "RunReport",
    "segment_sentences",
    "annotate_notes",
    "verify_annotations",
    "run_silver",
    "run_bronze",
    "phi_findings",
    "read_notes_jsonl",
]

log = logging.getLogger(__name__)


class AugmentError(ValueError):
    pass


@dataclass(frozen=True)
class SourceNote:
    note_id: str
    text: str
    origin: str = ""

    def __post_init__(self):
        if not self.note_id:
            raise AugmentError("note_id is empty")
        if not self.text.strip():
            raise AugmentError(f"note {self.note_id}: text is empty")


@dataclass(frozen=True)
class AnnotationRecord:
    note_id: str
    sentence: str
    class_id: int
    chunk_index: int = 0
    request_tag: str = ""
    verified: bool | None = None
    reason: str | None = None
    source_stage: str = "annotate"


@dataclass(frozen=True)
class QuotaPlan:
    targets: Mapping[int, int]
    max_requests: int

    def __post_init__(self):
        if any(t < 0 for t in self.targets.values()):
            raise AugmentError("quota targets must be >= 0")
        if self.max_requests < 1:
            raise AugmentError("max_requests must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    model_id: str
    annotate_temperature: float = 0.0
    verify_temperature: float = 0.0
    generate_temperature: float = 0.7
    max_output_tokens: int = 1024
    # Context budget in tokens approximated by whitespace words; longer notes
    # are chunked at sentence boundaries.
    max_note_words: int = 800
    prompt_suffix: str = ""
    name_blocklist: tuple[str, ...] = ()
    max_workers: int | None = None


@dataclass
class RunReport:
    """Counters surfaced with every pipeline run."""

    notes: int = 0
    requests: int = 0
    annotated: int = 0
    verified_true: int = 0
    verified_false: int = 0
    unreconciled: int = 0
    parse_skips: int = 0
    request_failures: int = 0
    rejected_items: int = 0
    overflow: int = 0
    phi_drops: int = 0
    unanchored: int = 0
    duplicates: int = 0
    quota_unmet: bool = False
    events: list[str] = field(default_factory=list)
    # Per-request parse reports keyed by request tag (valid/rejected/unanchored).
    parse_reports: dict[str, dict] = field(default_factory=dict)

    def as_dict(self) -> dict:
        data = {k: v for k, v in self.__dict__.items() if k not in ("events", "parse_reports")}
        data["events"] = list(self.events)
        data["parse_reports"] = {tag: dict(report) for tag, report in self.parse_reports.items()}
        return data

    def render_text(self) -> str:
        lines = ["run report"]
        for key, value in self.as_dict().items():
            if key == "events":
                continue
            lines.append(f"  {key}: {value}")
        if self.events:
            lines.append("  events:")
            lines.extend(f"    - {event}" for event in self.events)
        return "\n".join(lines) + "\n"


def read_notes_jsonl(path) -> list[SourceNote]:
    notes: list[SourceNote] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                notes.append(
                    SourceNote(
                        note_id=str(record["note_id"]),
                        text=record["text"],
                        origin=record.get("origin", ""),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise AugmentError(f"{path}:{line_no}: bad note record: {exc}") from exc
    seen: set[str] = set()
    for note in notes:
        if note.note_id in seen:
            raise AugmentError(f"duplicate note_id {note.note_id!r}")
        seen.add(note.note_id)
    return notes


def _chunks(note: SourceNote, max_words: int) -> list[str]:
    if len(note.text.split()) <= max_words:
        return [note.text]
    pieces: list[str] = []
    current: list[str] = []
    current_words = 0
    for sentence in segment_sentences(note.text):
        words = len(sentence.split())
        if current and current_words + words > max_words:
            pieces.append(" ".join(current))
            current, current_words = [], 0
        current.append(sentence)
        current_words += words
    if current:
        pieces.append(" ".join(current))
    return pieces


# --- PHI screen -------------------------------------------------------------

_PHI_PATTERNS = (
    ("phone", re.compile(r"\(?\b\d{3}\)?[-. ]\d{3}[-. ]\d{4}\b")),
    ("ssn", re.compile(r"\b\d{3}-\d{2}-\d{4}\b")),
    ("id-run", re.compile(r"\b\d{6,}\b")),
    (
        "dob",
        re.compile(r"\b(?:dob|date of birth|born(?:\s+on)?)\b[:\s]*\d{1,2}[/-]\d{1,2}[/-]\d{2,4}", re.I),
    ),
)


def phi_findings(text: str, name_blocklist: Sequence[str] = ()) -> list[str]:
    """Pattern findings suggesting protected health information.

    Generated text is asserted PHI-free upstream, but a belt-and-braces
    filter is cheap; any finding drops the sentence.
    """
    findings = [label for label, pattern in _PHI_PATTERNS if pattern.search(text)]
    for name in name_blocklist:
        if re.search(rf"\b{re.escape(name)}\b", text, re.I):
            findings.append(f"blocked-name:{name}")
    return findings


# --- silver pipeline --------------------------------------------------------


def _complete_many(gateway: Gateway, requests: list[CompletionRequest], max_workers: int | None):
    """Issue requests, possibly concurrently, returning results in input order.

    Each slot holds either a response or the exception raised for it.
    """
    workers = max_workers or gateway.config.max_in_flight
    if workers <= 1 or len(requests) <= 1:
        results = []
        for request in requests:
            try:
                results.append(gateway.complete(request))
            except GatewayError as exc:
                results.append(exc)
        return results
    results = [None] * len(requests)

    def run(index: int):
        try:
            results[index] = gateway.complete(requests[index])
        except GatewayError as exc:
            results[index] = exc

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, range(len(requests))))
    return results


def annotate_notes(
    notes: Sequence[SourceNote],
    schema: GuidelineSchema,
    gateway: Gateway,
    config: PipelineConfig,
    report: RunReport | None = None,
) -> list[AnnotationRecord]:
    """Run the annotation prompt over every note and collect valid items.

    Notes whose completion or parse fails are skipped and counted; output
    order is canonicalized by (note_id, chunk, appearance) so concurrent
    completion order never leaks into results.
    """
    report = report if report is not None else RunReport()
    report.notes += len(notes)
    tasks: list[tuple[SourceNote, int, str]] = []
    for note in sorted(notes, key=lambda n: n.note_id):
        for chunk_index, chunk in enumerate(_chunks(note, config.max_note_words)):
            tasks.append((note, chunk_index, chunk))
    requests = [
        CompletionRequest(
            prompt=prompts.build_annotation_prompt(chunk, schema, config.prompt_suffix),
            model_id=config.model_id,
            max_output_tokens=config.max_output_tokens,
            temperature=config.annotate_temperature,
            request_tag=f"annotate:{note.note_id}#{chunk_index}",
        )
        for note, chunk_index, chunk in tasks
    ]
    outcomes = _complete_many(gateway, requests, config.max_workers)
    report.requests += len(requests)

    records: list[AnnotationRecord] = []
    for (note, chunk_index, _chunk), request, outcome in zip(tasks, requests, outcomes):
        if isinstance(outcome, GatewayError):
            report.request_failures += 1
            report.events.append(f"{request.request_tag}: request failed: {outcome}")
            continue
        try:
            items, parse_report = prompts.parse_annotation_output(outcome.text, schema)
        except ParseError as exc:
            report.parse_skips += 1
            report.events.append(f"{request.request_tag}: parse failed: {exc}")
            continue
        report.parse_reports[request.request_tag] = parse_report.as_dict()
        report.rejected_items += parse_report.rejected
        report.events.extend(f"{request.request_tag}: {reason}" for reason in parse_report.reasons)
        for item in items:
            records.append(
                AnnotationRecord(
                    note_id=note.note_id,
                    sentence=item.sentence,
                    class_id=item.class_id,
                    chunk_index=chunk_index,
                    request_tag=request.request_tag,
                )
            )
    report.annotated += len(records)
    return records


def verify_annotations(
    records: Sequence[AnnotationRecord],
    notes: Sequence[SourceNote],
    schema: GuidelineSchema,
    gateway: Gateway,
    config: PipelineConfig,
    report: RunReport | None = None,
) -> list[AnnotationRecord]:
    """Chain-of-thought check of annotate output.

    Records are kept only when the verification pass returns decision=true
    for the exact (sentence, class) pair; decision=false and unmatched pairs
    are dropped and counted. A failed parse conservatively drops the whole
    group it covered.
    """
    report = report if report is not None else RunReport()
    note_by_id = {note.note_id: note for note in notes}
    groups: dict[tuple[str, int], list[AnnotationRecord]] = {}
    for record in records:
        groups.setdefault((record.note_id, record.chunk_index), []).append(record)

    ordered_keys = sorted(groups)
    requests = []
    for note_id, chunk_index in ordered_keys:
        note = note_by_id.get(note_id)
        if note is None:
            raise AugmentError(f"records reference unknown note {note_id!r}")
        chunk = _chunks(note, config.max_note_words)[chunk_index]
        items = [AnnotationItem(r.sentence, r.class_id) for r in groups[(note_id, chunk_index)]]
        requests.append(
            CompletionRequest(
                prompt=prompts.build_verification_prompt(chunk, schema, items, config.prompt_suffix),
                model_id=config.model_id,
                max_output_tokens=config.max_output_tokens,
                temperature=config.verify_temperature,
                request_tag=f"verify:{note_id}#{chunk_index}",
            )
        )
    outcomes = _complete_many(gateway, requests, config.max_workers)
    report.requests += len(requests)

    survivors: list[AnnotationRecord] = []
    for key, request, outcome in zip(ordered_keys, requests, outcomes):
        group = groups[key]
        if isinstance(outcome, GatewayError):
            report.request_failures += 1
            report.events.append(f"{request.request_tag}: request failed: {outcome}")
            continue
        try:
            items, parse_report = prompts.parse_verification_output(outcome.text, schema)
        except ParseError as exc:
            report.parse_skips += 1
            report.events.append(f"{request.request_tag}: parse failed, {len(group)} records dropped: {exc}")
            continue
        report.parse_reports[request.request_tag] = parse_report.as_dict()
        report.rejected_items += parse_report.rejected
        pool = list(items)
        for record in group:
            match = None
            for candidate in pool:
                if candidate.class_id == record.class_id and squash_ws(candidate.sentence) == squash_ws(
                    record.sentence
                ):
                    match = candidate
                    break
            if match is None:
                report.unreconciled += 1
                report.events.append(f"{request.request_tag}: unreconciled pair {record.sentence!r}")
                continue
            pool.remove(match)
            if match.decision:
                report.verified_true += 1
                survivors.append(
                    replace(record, verified=True, reason=match.reason, source_stage="verify")
                )
            else:
                report.verified_false += 1
    return survivors


def run_silver(
    notes: Sequence[SourceNote],
    schema: GuidelineSchema,
    gateway: Gateway,
    config: PipelineConfig,
) -> tuple[list[LabeledSentence], RunReport]:
    """Annotate, verify, and convert surviving records to silver sentences."""
    report = RunReport()
    records = annotate_notes(notes, schema, gateway, config, report)
    survivors = verify_annotations(records, notes, schema, gateway, config, report)
    sentences = [
        LabeledSentence(
            text=record.sentence,
            class_id=record.class_id,
            tier="silver",
            provenance={
                "note_id": record.note_id,
                "chunk_index": record.chunk_index,
                "annotate_tag": record.request_tag,
                "verify_tag": f"verify:{record.note_id}#{record.chunk_index}",
                "stage": record.source_stage,
                "reason": record.reason,
            },
        )
        for record in survivors
    ]
    return sentences, report


# --- bronze pipeline --------------------------------------------------------


def _steering_text(schema: GuidelineSchema, deficits: dict[int, int], serial: int) -> str:
    """Steering line for the generation prompt's text slot.

    Names the most-deficient categories and carries a note serial so each
    request is distinct (and therefore individually replayable)."""
    wanted = [cid for cid, need in sorted(deficits.items(), key=lambda kv: (-kv[1], kv[0])) if need > 0]
    parts = [f"Note {serial}."]
    if wanted:
        top = ", ".join(
            f"Class {cid} ({category_by_id(schema, cid).title})" for cid in wanted[:3]
        )
        parts.append(f"Emphasize sentences that illustrate {top}.")
    return " ".join(parts)


def run_bronze(
    schema: GuidelineSchema,
    gateway: Gateway,
    quota: QuotaPlan,
    config: PipelineConfig,
) -> tuple[list[LabeledSentence], RunReport]:
    """Generate synthetic annotated notes until per-category quotas are met.

    Anchored annotations for categories still under quota become bronze
    sentences after the PHI screen; surplus, unanchored, duplicate, and
    PHI-flagged items are counted. If max_requests runs out first the partial
    output is returned with ``quota_unmet`` flagged in the report.
    """
    report = RunReport()
    have = {class_id: 0 for class_id in quota.targets}
    sentences: list[LabeledSentence] = []
    seen_texts: set[tuple[str, int]] = set()

    def deficits() -> dict[int, int]:
        return {cid: quota.targets[cid] - have[cid] for cid in quota.targets}

    serial = 0
    while any(need > 0 for need in deficits().values()) and serial < quota.max_requests:
        serial += 1
        steering = _steering_text(schema, deficits(), serial)
        request = CompletionRequest(
            prompt=prompts.build_generation_prompt(schema, steering, config.prompt_suffix),
            model_id=config.model_id,
            max_output_tokens=config.max_output_tokens,
            temperature=config.generate_temperature,
            request_tag=f"generate:{serial:04d}",
        )
        report.requests += 1
        try:
            response = gateway.complete(request)
        except GatewayError as exc:
            report.request_failures += 1
            report.events.append(f"{request.request_tag}: request failed: {exc}")
            continue
        try:
            note, parse_report = prompts.parse_generation_output(response.text, schema)
        except ParseError as exc:
            report.parse_skips += 1
            report.events.append(f"{request.request_tag}: parse failed: {exc}")
            continue
        report.parse_reports[request.request_tag] = parse_report.as_dict()
        report.rejected_items += parse_report.rejected
        note_digest = hashlib.sha256(note.note_text.encode("utf-8")).hexdigest()[:16]
        for item, anchored in zip(note.annotations, note.anchored):
            if not anchored:
                report.unanchored += 1
                report.events.append(f"{request.request_tag}: unanchored {item.sentence!r}")
                continue
            if have.get(item.class_id, None) is None or have[item.class_id] >= quota.targets[item.class_id]:
                report.overflow += 1
                continue
            findings = phi_findings(item.sentence, config.name_blocklist)
            if findings:
                report.phi_drops += 1
                report.events.append(f"{request.request_tag}: phi {findings} in {item.sentence!r}")
                continue
            key = (squash_ws(item.sentence).lower(), item.class_id)
            if key in seen_texts:
                report.duplicates += 1
                continue
            seen_texts.add(key)
            have[item.class_id] += 1
            report.annotated += 1
            sentences.append(
                LabeledSentence(
                    text=item.sentence,
                    class_id=item.class_id,
                    tier="bronze",
                    provenance={
                        "request_tag": request.request_tag,
                        "note_digest": note_digest,
                        "steering": steering,
                    },
                )
            )
    unmet = {cid: need for cid, need in deficits().items() if need > 0}
    if unmet:
        report.quota_unmet = True
        report.events.append(f"quota unmet after {serial} requests: {unmet}")
    return sentences, report
