"""Prompt templates for annotation, verification, and note generation, plus
tolerant parsers for the structured JSON the prompts demand.

Raw model output rarely arrives as clean JSON: code fences, leading prose,
and trailing commentary are all common. The parsers locate the first
syntactically valid JSON array of objects by scanning ``[`` positions with
balanced-bracket candidate slicing, then validate every object. Rejected
items are counted and reasoned about, never silently dropped.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from .taxonomy import GuidelineSchema, render_guideline
from .textproc import squash_ws

log = logging.getLogger(__name__)


class PromptError(ValueError):
    pass


class EmptyAnnotationSet(PromptError):
    pass


class ParseError(ValueError):
    pass


class NoJsonFound(ParseError):
    pass


class AllItemsInvalid(ParseError):
    pass


class EmptyNote(ParseError):
    pass


@dataclass(frozen=True)
class AnnotationItem:
    sentence: str
    class_id: int


@dataclass(frozen=True)
class VerificationItem:
    sentence: str
    class_id: int
    decision: bool
    reason: str


@dataclass
class ParseReport:
    valid: int = 0
    rejected: int = 0
    unanchored: int = 0
    reasons: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "valid": self.valid,
            "rejected": self.rejected,
            "unanchored": self.unanchored,
            "reasons": list(self.reasons),
        }


@dataclass(frozen=True)
class GeneratedNote:
    note_text: str
    annotations: tuple[AnnotationItem, ...]
    anchored: tuple[bool, ...]

    def anchored_items(self) -> list[AnnotationItem]:
        return [item for item, ok in zip(self.annotations, self.anchored) if ok]


_ANNOTATION_TEMPLATE = r"""Task: Annotate the text based on the provided annotation guideline.

    |Start of text|
    {text}
    |End of text|

    |Start of annotation guideline|
    {guideline}
    |End of annotation guideline|
    Format output as a valid json with the following structure:
    [
    {{
    "sentence":str,\\ The sentence that is annotated.
    "class":int \\ The class that the sentence belongs to.
    }}
    ]"""

_VERIFICATION_TEMPLATE = r"""Task: Check if the annotations of the text based on the provided annotation guideline are correct or not and explain why.

    |Start of text|
    {text}
    |End of text|

    |Start of annotation guideline|
    {guideline}
    |End of annotation guideline|

    |Start of annotation|
    {annotations}
    |End of annotation|

    Format output as a valid json with the following structure:
    [
    {{
    "sentence":str,\\ The sentence that is annotated
    "class":int, \\ The class that the sentence belongs to.
    "decision":bool, \\ Whether the annotation is correct or not.
    "reason":str \\ Explain why.
    }}
    ]"""

_GENERATION_TEMPLATE = r"""Task: Generate a clinical note and annotate the text based on the provided annotation guideline.

    |Start of text|
    {text}
    |End of text|

    |Start of annotation guideline|
    {guideline}
    |End of annotation guideline|

    Format annotation output as a valid json with the following structure:
    [
    {{
    "sentence":str,\\ The sentence that is annotated.
    "class":int \\ The class that the sentence belongs to.
    }}
    ]"""


def _require_schema(schema: GuidelineSchema) -> str:
    if not schema.categories:
        raise PromptError("guideline schema has no categories")
    return render_guideline(schema)


def build_annotation_prompt(note: str, guideline: GuidelineSchema, suffix: str = "") -> str:
    """Prompt asking the model to annotate ``note`` against the guideline.

    The note is embedded verbatim (no escaping); ``suffix`` is a per-model
    format-control hook, empty by default.
    """
    if not note.strip():
        raise PromptError("note text is empty")
    prompt = _ANNOTATION_TEMPLATE.format(text=note, guideline=_require_schema(guideline))
    return prompt + suffix


def build_verification_prompt(
    note: str,
    guideline: GuidelineSchema,
    annotations: list[AnnotationItem],
    suffix: str = "",
) -> str:
    """Prompt asking the model to check prior annotations and explain why."""
    if not annotations:
        raise EmptyAnnotationSet("nothing to verify")
    payload = json.dumps(
        [{"sentence": a.sentence, "class": a.class_id} for a in annotations],
        ensure_ascii=False,
    )
    prompt = _VERIFICATION_TEMPLATE.format(
        text=note, guideline=_require_schema(guideline), annotations=payload
    )
    return prompt + suffix


def build_generation_prompt(
    guideline: GuidelineSchema, steering: str | None = None, suffix: str = ""
) -> str:
    """Prompt asking the model to generate a clinical note and annotate it.

    ``steering`` fills the text block and is used to request emphasis on
    particular categories during quota balancing.
    """
    prompt = _GENERATION_TEMPLATE.format(text=steering or "", guideline=_require_schema(guideline))
    return prompt + suffix


def _json_array_candidates(raw: str):
    """Yield (start, end, parsed) for each balanced slice that parses as a
    non-empty JSON array of objects, scanning ``[`` positions in order."""
    for start, ch in enumerate(raw):
        if ch != "[":
            continue
        depth = 0
        in_string = False
        escaped = False
        for pos in range(start, len(raw)):
            c = raw[pos]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
                continue
            if c == '"':
                in_string = True
            elif c in "[{":
                depth += 1
            elif c in "]}":
                depth -= 1
                if depth == 0:
                    candidate = raw[start : pos + 1]
                    try:
                        parsed = json.loads(candidate)
                    except json.JSONDecodeError:
                        break
                    if isinstance(parsed, list) and parsed and all(isinstance(o, dict) for o in parsed):
                        yield start, pos + 1, parsed
                    break
            if depth < 0:
                break


def _first_array(raw: str) -> tuple[int, int, list]:
    for start, end, parsed in _json_array_candidates(raw):
        return start, end, parsed
    raise NoJsonFound("no valid JSON array of objects in output")


def _coerce_class(value, schema: GuidelineSchema) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, str) and value.strip().isdigit():
        value = int(value.strip())
    if not isinstance(value, int):
        return None
    if value not in schema.ids():
        return None
    return value


def _coerce_decision(value) -> bool | None:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "false"):
        return value.strip().lower() == "true"
    return None


def _validate_annotation(obj: dict, schema: GuidelineSchema) -> AnnotationItem | str:
    sentence = obj.get("sentence")
    if not isinstance(sentence, str) or not sentence.strip():
        return "missing or empty sentence"
    if "class" not in obj:
        return "missing class"
    class_id = _coerce_class(obj["class"], schema)
    if class_id is None:
        return f"invalid class {obj['class']!r}"
    return AnnotationItem(sentence=sentence.strip(), class_id=class_id)


def parse_annotation_output(raw: str, schema: GuidelineSchema) -> tuple[list[AnnotationItem], ParseReport]:
    """Extract validated annotation items from raw model output."""
    _, _, objects = _first_array(raw)
    report = ParseReport()
    items: list[AnnotationItem] = []
    for idx, obj in enumerate(objects):
        result = _validate_annotation(obj, schema)
        if isinstance(result, str):
            report.rejected += 1
            report.reasons.append(f"item {idx}: {result}")
            log.debug("rejected annotation item %d: %s", idx, result)
        else:
            report.valid += 1
            items.append(result)
    if not items:
        raise AllItemsInvalid(f"array of {len(objects)} objects held no valid annotation items")
    return items, report


def parse_verification_output(raw: str, schema: GuidelineSchema) -> tuple[list[VerificationItem], ParseReport]:
    """Extract validated verification items (sentence, class, decision, reason)."""
    _, _, objects = _first_array(raw)
    report = ParseReport()
    items: list[VerificationItem] = []
    for idx, obj in enumerate(objects):
        base = _validate_annotation(obj, schema)
        if isinstance(base, str):
            report.rejected += 1
            report.reasons.append(f"item {idx}: {base}")
            continue
        decision = _coerce_decision(obj.get("decision"))
        reason = obj.get("reason")
        if decision is None:
            report.rejected += 1
            report.reasons.append(f"item {idx}: missing or non-boolean decision")
            continue
        if not isinstance(reason, str):
            report.rejected += 1
            report.reasons.append(f"item {idx}: missing reason")
            continue
        report.valid += 1
        items.append(
            VerificationItem(sentence=base.sentence, class_id=base.class_id, decision=decision, reason=reason)
        )
    if not items:
        raise AllItemsInvalid(f"array of {len(objects)} objects held no valid verification items")
    return items, report


_FENCE_TAILS = ("```", "```json", "```JSON", "~~~")


def _strip_dangling_fence(text: str) -> str:
    lines = text.rstrip().splitlines()
    while lines and lines[-1].strip() in _FENCE_TAILS:
        lines.pop()
    return "\n".join(lines).strip()


def parse_generation_output(raw: str, schema: GuidelineSchema) -> tuple[GeneratedNote, ParseReport]:
    """Split generated output into narrative text and its annotation array.

    Annotation sentences that do not occur in the narrative (after whitespace
    normalization) are flagged unanchored but still returned.
    """
    start, _, objects = _first_array(raw)
    note_text = _strip_dangling_fence(raw[:start])
    if not note_text:
        raise EmptyNote("no narrative text before the annotation array")
    report = ParseReport()
    items: list[AnnotationItem] = []
    anchored: list[bool] = []
    haystack = squash_ws(note_text)
    for idx, obj in enumerate(objects):
        result = _validate_annotation(obj, schema)
        if isinstance(result, str):
            report.rejected += 1
            report.reasons.append(f"item {idx}: {result}")
            continue
        report.valid += 1
        items.append(result)
        is_anchored = squash_ws(result.sentence) in haystack
        anchored.append(is_anchored)
        if not is_anchored:
            report.unanchored += 1
            report.reasons.append(f"item {idx}: sentence not found in note text")
    note = GeneratedNote(note_text=note_text, annotations=tuple(items), anchored=tuple(anchored))
    return note, report
