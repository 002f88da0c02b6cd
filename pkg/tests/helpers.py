"""Shared fixtures: scripted LLM responses for the replay transcripts, and
synthetic corpus generators for the training smoke tests."""

from __future__ import annotations

import json
import random
from pathlib import Path

from adsynth.augment import PipelineConfig, QuotaPlan, SourceNote, read_notes_jsonl
from adsynth.corpus import LabeledSentence
from adsynth.evaluator import ClassMetrics
from adsynth.gateway import Gateway, GatewayConfig
from adsynth.report import ReportCell

FIXTURES = Path(__file__).parent / "fixtures"
NOTES_PATH = FIXTURES / "notes.jsonl"
TRANSCRIPTS = FIXTURES / "transcripts"
LLM_OUTPUTS = FIXTURES / "llm_outputs"
PUBLISHED_METRICS = FIXTURES / "published_metrics.json"

SILVER_MODEL = "silver-annotator"
BRONZE_MODEL = "bronze-generator"
BRONZE_QUOTA = QuotaPlan(targets={1: 2, 8: 1}, max_requests=4)


def silver_config(**overrides) -> PipelineConfig:
    return PipelineConfig(model_id=SILVER_MODEL, **overrides)


def bronze_config(**overrides) -> PipelineConfig:
    return PipelineConfig(model_id=BRONZE_MODEL, **overrides)


def load_notes() -> list[SourceNote]:
    return read_notes_jsonl(NOTES_PATH)


def _ann(sentence: str, class_id: int) -> dict:
    return {"sentence": sentence, "class": class_id}


def _ver(sentence: str, class_id: int, decision: bool, reason: str) -> dict:
    return {"sentence": sentence, "class": class_id, "decision": decision, "reason": reason}


# Scripted model output per request tag. The silver script exercises clean,
# fenced, prose-wrapped, unparseable, and partially invalid outputs plus
# every verification outcome (true, false, unreconciled); the bronze script
# exercises quota saturation, overflow, PHI drops, and unanchored items.
SCRIPTED_RESPONSES: dict[str, str] = {
    "annotate:n01#0": json.dumps(
        [
            _ann("He forgets recent conversations.", 1),
            _ann("MMSE score was 24.", 5),
            _ann("Uses a planner for appointments.", 8),
        ]
    ),
    "verify:n01#0": json.dumps(
        [
            _ver("He forgets recent conversations.", 1, True, "memory complaint fits Class 1"),
            _ver("MMSE score was 24.", 5, True, "MMSE is a cognitive assessment"),
            _ver("Uses a planner for appointments.", 8, False, "not clearly a coping strategy here"),
        ]
    ),
    "annotate:n02#0": "```json\n"
    + json.dumps(
        [
            _ann("Daughter reports that he repeatedly asks the same question.", 2),
            _ann("Neck is supple without lymphadenopathy.", 4),
        ]
    )
    + "\n```",
    "verify:n02#0": json.dumps(
        [_ver("Daughter reports that he repeatedly asks the same question.", 2, True, "family concern about cognition")]
    ),
    "annotate:n03#0": "No AD-related signs or symptoms were found in this text.",
    "annotate:n04#0": "Here are the annotations: "
    + json.dumps(
        [
            _ann("MRI of the brain was ordered.", 7),
            _ann("Patient was started on donepezil.", 6),
            _ann("Wife has to remind him about appointments.", 3),
            _ann("BP was 120/80 today.", 12),
        ]
    ),
    "verify:n04#0": json.dumps(
        [
            _ver("MRI of the brain was ordered.", 7, True, "head imaging for cognitive workup"),
            _ver("Patient was started on donepezil.", 6, True, "cholinesterase inhibitor"),
            _ver("Wife has to remind him about appointments.", 3, True, "needs assistance from a person"),
        ]
    ),
    "annotate:n05#0": json.dumps(
        [
            _ann("Mood has been low with increased irritability.", 9),
            _ann("He is able to dress himself without help.", 3),
        ]
    ),
    "verify:n05#0": json.dumps(
        [
            _ver("Mood has been low with increased irritability.", 9, False, "mood is chronic and unrelated here"),
            _ver("He is able to dress himself without help.", 3, False, "explicitly does NOT require assistance"),
        ]
    ),
    "generate:0001": (
        "Office visit note: An 84-year-old veteran returns with his daughter. "
        "He has been forgetting recent conversations and appointments. "
        "His contact number 555-123-4567 was confirmed at check-in. "
        "Daughter expressed concern about his recent memory lapses. "
        "She relies on a written shopping list so she does not forget items.\n\n"
        + json.dumps(
            [
                _ann("He has been forgetting recent conversations and appointments.", 1),
                _ann("His contact number 555-123-4567 was confirmed at check-in.", 1),
                _ann("Daughter expressed concern about his recent memory lapses.", 2),
                _ann("She relies on a written shopping list so she does not forget items.", 8),
            ]
        )
    ),
    "generate:0002": (
        "Follow-up note: He frequently misplaces his keys and wallet. "
        "He also keeps a calendar by the phone as a reminder.\n\n"
        + json.dumps(
            [
                _ann("This sentence does not appear in the note.", 1),
                _ann("He frequently misplaces his keys and wallet.", 1),
                _ann("He also keeps a calendar by the phone as a reminder.", 8),
            ]
        )
    ),
}

# Counts implied by the script above, used to cross-check run reports.
SILVER_EXPECTED = {
    "annotated": 10,
    "verified_true": 6,
    "verified_false": 3,
    "unreconciled": 1,
    "parse_skips": 1,
    "rejected_items": 1,
}
BRONZE_EXPECTED = {
    "requests": 2,
    "annotated": 3,
    "unanchored": 1,
    "overflow": 2,
    "phi_drops": 1,
}


def scripted_provider(request):
    try:
        return SCRIPTED_RESPONSES[request.request_tag]
    except KeyError:
        raise AssertionError(f"no scripted response for tag {request.request_tag!r}") from None


def record_gateway(transcript_dir: Path) -> Gateway:
    return Gateway(
        GatewayConfig(mode="record", transcript_dir=transcript_dir, retry_limit=0, backoff=()),
        provider=scripted_provider,
    )


def replay_gateway(transcript_dir: Path = TRANSCRIPTS) -> Gateway:
    return Gateway(GatewayConfig(mode="replay", transcript_dir=transcript_dir))


def build_transcript_store(directory: Path) -> None:
    """Record the scripted silver and bronze runs into ``directory``."""
    from adsynth.augment import run_bronze, run_silver
    from adsynth.taxonomy import load_default_guideline

    schema = load_default_guideline()
    gateway = record_gateway(directory)
    run_silver(load_notes(), schema, gateway, silver_config())
    run_bronze(schema, gateway, BRONZE_QUOTA, bronze_config())


# --- synthetic separable corpus ----------------------------------------------

_STEMS = ("sign", "marker", "feature", "trait", "signal", "pattern")
_FILLER = (
    "routine", "maintenance", "schedule", "facility", "parking", "supply",
    "inventory", "paperwork", "billing", "cafeteria", "elevator", "hallway",
)


def class_vocab(class_id: int) -> list[str]:
    return [f"{stem}{class_id}" for stem in _STEMS]


def make_separable_gold(per_class: int = 60, seed: int = 7) -> list[LabeledSentence]:
    """Nine classes with disjoint keyword vocabularies; serial tokens keep
    every sentence distinct under normalization."""
    rng = random.Random(seed)
    items: list[LabeledSentence] = []
    serial = 0
    for class_id in range(1, 10):
        vocab = class_vocab(class_id)
        for _ in range(per_class):
            serial += 1
            picks = rng.sample(vocab, 3)
            text = f"Patient shows {picks[0]} and {picks[1]} with {picks[2]} during visit {serial}."
            items.append(LabeledSentence(text, class_id, "gold", {"serial": serial}))
    return items


def make_separable_tier(tier: str, per_class: int = 30, seed: int = 11) -> list[LabeledSentence]:
    rng = random.Random(seed)
    items: list[LabeledSentence] = []
    serial = 0
    for class_id in range(1, 10):
        vocab = class_vocab(class_id)
        for _ in range(per_class):
            serial += 1
            picks = rng.sample(vocab, 3)
            text = f"Entry {serial} for {tier}: {picks[0]} plus {picks[1]} observed alongside {picks[2]}."
            items.append(LabeledSentence(text, class_id, tier, {"serial": serial}))
    return items


def make_negative_pool(n_sentences: int, seed: int = 3, sentences_per_note: int = 30) -> list[SourceNote]:
    """Filler-vocabulary notes for negative sampling; disjoint from every
    class vocabulary and long enough to pass the content-token filter."""
    rng = random.Random(seed)
    notes: list[SourceNote] = []
    sentences: list[str] = []
    for serial in range(1, n_sentences + 1):
        picks = rng.sample(_FILLER, 3)
        sentences.append(
            f"Completed {picks[0]} review and {picks[1]} checks near the {picks[2]} area on day {serial}."
        )
    for index in range(0, len(sentences), sentences_per_note):
        chunk = sentences[index : index + sentences_per_note]
        notes.append(SourceNote(note_id=f"pool{index // sentences_per_note:04d}", text=" ".join(chunk), origin="pool"))
    return notes


# --- published metrics -------------------------------------------------------


def load_published() -> dict:
    with open(PUBLISHED_METRICS, encoding="utf-8") as fh:
        return json.load(fh)


def published_cells(task_payload: dict) -> dict[str, ReportCell]:
    """Turn a published-values task payload into render_report cells."""
    combos = sorted({combo for row in task_payload["rows"] for combo in row["values"]})
    cells: dict[str, ReportCell] = {}
    for combo in combos:
        per_class: dict[int, dict] = {}
        accuracy = None
        significant = None
        for row in task_payload["rows"]:
            value = row["values"][combo]
            if row["metric"] == "accuracy":
                accuracy = value
                significant = row.get("significant", {}).get(combo)
            else:
                per_class.setdefault(row["class_id"], {})[row["metric"]] = value
        cells[combo] = ReportCell(
            per_class={
                cid: ClassMetrics(
                    precision=vals.get("precision", 0.0),
                    recall=vals.get("recall", 0.0),
                    f1=vals.get("f1", 0.0),
                    support=0,
                )
                for cid, vals in per_class.items()
            },
            accuracy=accuracy,
            significant=significant,
        )
    return cells
