import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adsynth.prompts import (
    AllItemsInvalid,
    AnnotationItem,
    EmptyAnnotationSet,
    EmptyNote,
    NoJsonFound,
    PromptError,
    build_annotation_prompt,
    build_generation_prompt,
    build_verification_prompt,
    parse_annotation_output,
    parse_generation_output,
    parse_verification_output,
)
from adsynth.taxonomy import GuidelineSchema, load_default_guideline, render_guideline

from .helpers import LLM_OUTPUTS

SCHEMA = load_default_guideline()


# --- prompt building ----------------------------------------------------------


def test_annotation_prompt_structure():
    prompt = build_annotation_prompt("Pt forgets appointments.", SCHEMA)
    assert prompt.startswith("Task: Annotate the text based on the provided annotation guideline.")
    assert "|Start of text|" in prompt and "|End of text|" in prompt
    assert "Pt forgets appointments." in prompt
    assert "|Start of annotation guideline|" in prompt and "|End of annotation guideline|" in prompt
    assert "Format output as a valid json" in prompt
    # The guideline render is embedded verbatim.
    assert render_guideline(SCHEMA) in prompt


def test_annotation_prompt_delimiter_text_passthrough():
    tricky = "Pt said |End of text| yesterday."
    prompt = build_annotation_prompt(tricky, SCHEMA)
    assert tricky in prompt


def test_annotation_prompt_rejects_empty_inputs():
    with pytest.raises(PromptError):
        build_annotation_prompt("   ", SCHEMA)
    empty = GuidelineSchema(categories=(), raw_text="")
    with pytest.raises(Exception):
        build_annotation_prompt("note", empty)


def test_prompt_suffix_hook():
    prompt = build_annotation_prompt("note text", SCHEMA, suffix="\nRespond with JSON only.")
    assert prompt.endswith("Respond with JSON only.")


def _annotation_block(prompt):
    inner = prompt.split("|Start of annotation|", 1)[1].split("|End of annotation|", 1)[0]
    return json.loads(inner)


def test_verification_prompt_annotation_block():
    one = [AnnotationItem("He forgets.", 1)]
    prompt = build_verification_prompt("He forgets.", SCHEMA, one)
    assert "explain why" in prompt
    assert len(_annotation_block(prompt)) == 1
    three = [AnnotationItem(f"S{i}.", i + 1) for i in range(3)]
    prompt3 = build_verification_prompt("note", SCHEMA, three)
    block = _annotation_block(prompt3)
    assert [o["class"] for o in block] == [1, 2, 3]


def test_verification_prompt_empty_annotations():
    with pytest.raises(EmptyAnnotationSet):
        build_verification_prompt("note", SCHEMA, [])


def test_generation_prompt():
    prompt = build_generation_prompt(SCHEMA)
    assert "Generate a clinical note" in prompt
    steered = build_generation_prompt(SCHEMA, steering="emphasize Class 8")
    block = steered.split("|Start of text|", 1)[1].split("|End of text|", 1)[0]
    assert "emphasize Class 8" in block


def test_prompts_contain_no_parseable_json():
    # The JSON format skeleton must not itself parse as an annotation array.
    for prompt in (
        build_annotation_prompt("note", SCHEMA),
        build_verification_prompt("note", SCHEMA, [AnnotationItem("x", 1)]),
        build_generation_prompt(SCHEMA),
    ):
        head = prompt.split("|Start of annotation|")[0]
        with pytest.raises(NoJsonFound):
            parse_annotation_output(head, SCHEMA)


# --- parsing: spot cases ------------------------------------------------------


def test_parse_clean_annotation():
    items, report = parse_annotation_output('[{"sentence":"Forgets recent conversations.","class":1}]', SCHEMA)
    assert items == [AnnotationItem("Forgets recent conversations.", 1)]
    assert (report.valid, report.rejected) == (1, 0)


def test_parse_fenced_with_invalid_class():
    raw = 'Sure thing.\n```json\n[{"sentence":"A.","class":2},{"sentence":"B.","class":12}]\n```'
    items, report = parse_annotation_output(raw, SCHEMA)
    assert [i.class_id for i in items] == [2]
    assert report.rejected == 1
    assert any("invalid class" in reason for reason in report.reasons)


def test_parse_no_json():
    with pytest.raises(NoJsonFound):
        parse_annotation_output("no json here", SCHEMA)


def test_parse_all_invalid():
    with pytest.raises(AllItemsInvalid):
        parse_annotation_output('[{"sentence":"", "class": 77}]', SCHEMA)


def test_parse_verification_decisions_passed_through():
    raw = json.dumps(
        [
            {"sentence": "A.", "class": 1, "decision": True, "reason": "matches Class 1 memory loss"},
            {"sentence": "B.", "class": 2, "decision": False, "reason": "no family concern"},
        ]
    )
    items, report = parse_verification_output(raw, SCHEMA)
    assert [i.decision for i in items] == [True, False]
    assert report.valid == 2


def test_parse_verification_missing_reason_rejected():
    raw = '[{"sentence":"A.","class":1,"decision":true}, {"sentence":"B.","class":1,"decision":true,"reason":"ok"}]'
    items, report = parse_verification_output(raw, SCHEMA)
    assert len(items) == 1 and report.rejected == 1


def test_parse_generation_splits_note_and_annotations():
    raw = (
        "Note: He forgets recent conversations and events. Daughter manages his bills.\n"
        '[{"sentence":"He forgets recent conversations and events.","class":1},'
        '{"sentence":"Daughter manages his bills.","class":3}]'
    )
    note, report = parse_generation_output(raw, SCHEMA)
    assert note.note_text.startswith("Note:")
    assert len(note.annotations) == 2
    assert all(note.anchored)


def test_parse_generation_only_array_is_empty_note():
    with pytest.raises(EmptyNote):
        parse_generation_output('[{"sentence":"x","class":1}]', SCHEMA)


def test_parse_generation_unanchored_flagged_but_returned():
    raw = 'Short note about memory.\n[{"sentence":"Not in the note at all.","class":1}]'
    note, report = parse_generation_output(raw, SCHEMA)
    assert note.annotations and not note.anchored[0]
    assert report.unanchored == 1
    assert note.anchored_items() == []


def test_parse_generation_anchoring_ignores_whitespace():
    raw = 'He  forgets   names often.\n[{"sentence":"He forgets names often.","class":1}]'
    note, _ = parse_generation_output(raw, SCHEMA)
    assert note.anchored == (True,)


# --- parsing: fixture suite ---------------------------------------------------


def load_manifest():
    with open(LLM_OUTPUTS / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


MANIFEST = load_manifest()
PARSERS = {
    "annotation": parse_annotation_output,
    "verification": parse_verification_output,
}
ERRORS = {"NoJsonFound": NoJsonFound, "AllItemsInvalid": AllItemsInvalid, "EmptyNote": EmptyNote}


@pytest.mark.parametrize(
    "kind,entry",
    [(kind, entry) for kind in ("annotation", "verification") for entry in MANIFEST[kind]],
    ids=lambda value: value if isinstance(value, str) else value["file"],
)
def test_fixture_outputs_parse_to_oracle_counts(kind, entry):
    raw = (LLM_OUTPUTS / entry["file"]).read_text("utf-8")
    if entry["error"]:
        with pytest.raises(ERRORS[entry["error"]]):
            PARSERS[kind](raw, SCHEMA)
        return
    items, report = PARSERS[kind](raw, SCHEMA)
    assert len(items) == entry["valid"]
    assert report.valid == entry["valid"]
    assert report.rejected == entry["rejected"]


@pytest.mark.parametrize("entry", MANIFEST["generation"], ids=lambda e: e["file"])
def test_generation_fixtures_parse_to_oracle_counts(entry):
    raw = (LLM_OUTPUTS / entry["file"]).read_text("utf-8")
    if entry["error"]:
        with pytest.raises(ERRORS[entry["error"]]):
            parse_generation_output(raw, SCHEMA)
        return
    note, report = parse_generation_output(raw, SCHEMA)
    assert len(note.annotations) == entry["valid"]
    assert report.rejected == entry["rejected"]
    assert report.unanchored == entry["unanchored"]


def _source_objects(raw):
    """Independently decode every JSON array in raw and pool their objects."""
    decoder = json.JSONDecoder()
    objects = []
    for pos, ch in enumerate(raw):
        if ch != "[":
            continue
        try:
            value, _ = decoder.raw_decode(raw[pos:])
        except json.JSONDecodeError:
            continue
        if isinstance(value, list):
            objects.extend(o for o in value if isinstance(o, dict))
    return objects


def test_no_fabricated_fields():
    """Every returned item's fields trace back to a raw source object."""
    for entry in MANIFEST["annotation"]:
        if entry["error"]:
            continue
        raw = (LLM_OUTPUTS / entry["file"]).read_text("utf-8")
        items, _ = parse_annotation_output(raw, SCHEMA)
        sources = {
            (str(obj.get("sentence", "")).strip(), int(str(obj.get("class", 0)).strip() or 0))
            for obj in _source_objects(raw)
            if str(obj.get("class", "x")).strip().lstrip("-").isdigit()
        }
        for item in items:
            assert (item.sentence, item.class_id) in sources
            assert item.class_id in range(1, 10)


# --- tolerance monotonicity ----------------------------------------------------

sentences = st.text(
    alphabet=st.characters(codec="ascii", exclude_characters='"\\[]{}\x00'),
    min_size=1,
    max_size=40,
).filter(lambda s: s.strip())
prose = st.text(
    alphabet=st.characters(codec="ascii", exclude_characters="[]{}\x00"),
    max_size=80,
)


@given(
    items=st.lists(st.tuples(sentences, st.integers(1, 9)), min_size=1, max_size=5),
    before=prose,
    after=prose,
    fence=st.booleans(),
)
@settings(max_examples=150)
def test_embedded_array_always_recovered(items, before, after, fence):
    payload = json.dumps([{"sentence": s, "class": c} for s, c in items])
    raw = f"```json\n{payload}\n```" if fence else payload
    raw = f"{before}\n{raw}\n{after}"
    parsed, report = parse_annotation_output(raw, SCHEMA)
    assert [(i.sentence, i.class_id) for i in parsed] == [(s.strip(), c) for s, c in items]
    assert report.rejected == 0
