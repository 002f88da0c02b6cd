"""Parse, validate, and render the delimited annotation-guideline format.

The guideline is a plain-text document in which each sign/symptom category
appears as a ``|Class begin| ... |Class end|`` block carrying a ``Class N:``
header, an inline ``|Title begin| ... |Title end|`` line, and a verbatim
``|Definition begin| ... |Definition end|`` body, all bracketed by
``|Start of annotation schema|`` / ``|End of annotation schema|``.
Definitions are preserved byte-for-byte so prompts carry the expert text
unchanged.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

SCHEMA_START = "|Start of annotation schema|"
SCHEMA_END = "|End of annotation schema|"
CLASS_BEGIN = "|Class begin|"
CLASS_END = "|Class end|"
TITLE_BEGIN = "|Title begin|"
TITLE_END = "|Title end|"
DEFINITION_BEGIN = "|Definition begin|"
DEFINITION_END = "|Definition end|"

_CLASS_HEADER = re.compile(r"^Class\s+(\d+)\s*:$")

DEFAULT_GUIDELINE_RESOURCE = "ad_signs_guideline.txt"


class GuidelineError(ValueError):
    """Base class for guideline structure failures."""


class MalformedGuideline(GuidelineError):
    """Delimiters missing, unbalanced, or out of sequence."""


class DuplicateClass(GuidelineError):
    """The same class id appears in more than one block."""


class MissingClass(GuidelineError):
    """Class ids do not cover a contiguous 1..K range."""


class EmptyTitle(GuidelineError):
    """A class block carries a blank title."""


class UnknownCategory(GuidelineError):
    """Requested class id is not part of the schema."""


@dataclass(frozen=True)
class Category:
    id: int
    title: str
    definition: str


@dataclass(frozen=True)
class GuidelineSchema:
    categories: tuple[Category, ...]
    # The source text as loaded. Excluded from equality so that a canonical
    # re-render still compares equal to the originally loaded schema.
    raw_text: str = field(compare=False)

    def ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.categories)


def _validate_categories(categories: list[Category]) -> tuple[Category, ...]:
    if not categories:
        raise MalformedGuideline("no class blocks found between schema delimiters")
    seen: set[int] = set()
    for cat in categories:
        if cat.id in seen:
            raise DuplicateClass(f"class id {cat.id} appears more than once")
        seen.add(cat.id)
        if not cat.title.strip():
            raise EmptyTitle(f"class {cat.id} has an empty title")
        if not cat.definition.strip():
            raise MalformedGuideline(f"class {cat.id} has an empty definition")
    expected = set(range(1, len(categories) + 1))
    if seen != expected:
        missing = sorted(expected - seen)
        raise MissingClass(f"class ids {sorted(seen)} do not cover 1..{len(categories)} (missing {missing})")
    return tuple(sorted(categories, key=lambda c: c.id))


def load_guideline(source: str) -> GuidelineSchema:
    """Parse a guideline document into a schema.

    Delimiter lines are matched after trimming surrounding whitespace;
    definition bodies are kept verbatim. Raises rather than guessing on any
    structural problem.
    """
    lines = source.splitlines()
    trimmed = [ln.strip() for ln in lines]
    try:
        start = trimmed.index(SCHEMA_START)
    except ValueError:
        raise MalformedGuideline(f"missing {SCHEMA_START!r}") from None
    try:
        end = trimmed.index(SCHEMA_END, start + 1)
    except ValueError:
        raise MalformedGuideline(f"missing {SCHEMA_END!r}") from None

    categories: list[Category] = []
    i = start + 1
    while i < end:
        if trimmed[i] != CLASS_BEGIN:
            # Free text between blocks (e.g. a preamble line) is tolerated.
            i += 1
            continue
        i += 1
        # Class header.
        while i < end and not trimmed[i]:
            i += 1
        if i >= end:
            raise MalformedGuideline("class block truncated before its header")
        header = _CLASS_HEADER.match(trimmed[i])
        if header is None:
            raise MalformedGuideline(f"expected a 'Class N:' header, found {trimmed[i]!r}")
        class_id = int(header.group(1))
        i += 1
        # Title, inline on a single line.
        while i < end and not trimmed[i]:
            i += 1
        if i >= end or TITLE_BEGIN not in lines[i] or TITLE_END not in lines[i]:
            raise MalformedGuideline(f"class {class_id}: expected an inline title line")
        title_line = lines[i]
        title = title_line.split(TITLE_BEGIN, 1)[1].rsplit(TITLE_END, 1)[0].strip()
        i += 1
        # Definition body, verbatim.
        while i < end and not trimmed[i]:
            i += 1
        if i >= end or trimmed[i] != DEFINITION_BEGIN:
            raise MalformedGuideline(f"class {class_id}: expected {DEFINITION_BEGIN!r}")
        i += 1
        body_start = i
        while i < end and trimmed[i] != DEFINITION_END:
            i += 1
        if i >= end:
            raise MalformedGuideline(f"class {class_id}: unterminated definition")
        definition = "\n".join(lines[body_start:i])
        i += 1
        while i < end and not trimmed[i]:
            i += 1
        if i >= end or trimmed[i] != CLASS_END:
            raise MalformedGuideline(f"class {class_id}: expected {CLASS_END!r}")
        i += 1
        categories.append(Category(id=class_id, title=title, definition=definition))

    return GuidelineSchema(categories=_validate_categories(categories), raw_text=source)


def render_guideline(schema: GuidelineSchema) -> str:
    """Emit the canonical delimiter format accepted by :func:`load_guideline`."""
    _validate_categories(list(schema.categories))
    parts: list[str] = [SCHEMA_START, ""]
    for cat in schema.categories:
        parts.extend(
            [
                CLASS_BEGIN,
                f"Class {cat.id}:",
                f"{TITLE_BEGIN} {cat.title} {TITLE_END}",
                DEFINITION_BEGIN,
                cat.definition,
                DEFINITION_END,
                CLASS_END,
                "",
            ]
        )
    parts.append(SCHEMA_END)
    return "\n".join(parts) + "\n"


def category_by_id(schema: GuidelineSchema, class_id: int) -> Category:
    for cat in schema.categories:
        if cat.id == class_id:
            return cat
    raise UnknownCategory(f"class id {class_id} not in schema (ids {list(schema.ids())})")


def load_default_guideline() -> GuidelineSchema:
    """Load the guideline shipped with the package."""
    text = resources.files("adsynth.resources").joinpath(DEFAULT_GUIDELINE_RESOURCE).read_text("utf-8")
    return load_guideline(text)
