"""Shared text utilities: normalization, word-level tokenization, and
deterministic rule-based sentence segmentation."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_WS = re.compile(r"\s+")
_TOKEN = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")

# Periods after these tokens never end a sentence (matched case-insensitively
# with trailing dots stripped). Clinical shorthand is heavily represented.
ABBREVIATIONS = frozenset(
    """
    dr mr mrs ms prof rev fr jr sr st
    pt pts appt appts approx dept dx hx fx rx tx sx
    e.g i.e eg ie etc vs viz cf al a.m p.m
    fig figs no nos vol mon tue wed thu fri sat sun
    jan feb mar apr jun jul aug sep sept oct nov dec
    neg pos wt ht bid tid qid prn po
    """.split()
)


def normalize(text: str) -> str:
    """Lowercase, collapse whitespace runs to single spaces, and trim."""
    return _WS.sub(" ", text.lower()).strip()


def squash_ws(text: str) -> str:
    """Collapse whitespace runs without changing case; used for matching."""
    return _WS.sub(" ", text).strip()


def tokens(text: str) -> list[str]:
    """Tokens of the normalized text: maximal alphanumeric runs plus each
    standalone punctuation mark."""
    return _TOKEN.findall(normalize(text))


def token_count(text: str) -> int:
    return len(tokens(text))


@lru_cache(maxsize=1)
def default_stop_words() -> frozenset[str]:
    """The fixed stop-word list shipped with the package."""
    text = resources.files("adsynth.resources").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(
        line.strip().lower() for line in text.splitlines() if line.strip() and not line.startswith("#")
    )


def load_stop_words(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(
            line.strip().lower() for line in fh if line.strip() and not line.startswith("#")
        )


def content_token_count(text: str, stop_words: frozenset[str] | None = None) -> int:
    """Count tokens that survive removing punctuation and stop words."""
    stop = default_stop_words() if stop_words is None else stop_words
    return sum(1 for t in tokens(text) if t[0].isalnum() and t not in stop)


def _guarded(piece: str) -> bool:
    """True when the token ending ``piece`` blocks a sentence boundary."""
    tail = re.search(r"[A-Za-z][A-Za-z.]*$|[0-9.]+$", piece.rstrip("."))
    if tail is None:
        return False
    word = tail.group(0).lower().rstrip(".")
    if word in ABBREVIATIONS:
        return True
    # Single-letter initials ("J. Smith").
    return len(word) == 1 and word.isalpha()


def segment_sentences(text: str) -> list[str]:
    """Deterministic rule-based sentence segmentation.

    Terminator punctuation (``.!?``) followed by whitespace or end-of-line
    closes a sentence, except after a guarded abbreviation or inside a decimal
    number. Newlines always act as boundaries, which keeps list-like lines
    intact as single segments. The segments cover every non-whitespace
    character of the input in order.
    """
    segments: list[str] = []
    for line in text.splitlines():
        start = 0
        i = 0
        n = len(line)
        while i < n:
            ch = line[i]
            if ch in ".!?":
                # Consume a run of terminators plus trailing quotes/brackets.
                j = i + 1
                while j < n and line[j] in ".!?\"')]":
                    j += 1
                at_break = j >= n or line[j].isspace()
                if at_break and not (ch == "." and _guarded(line[start:i])):
                    piece = line[start:j].strip()
                    if piece:
                        segments.append(piece)
                    start = j
                i = j
            else:
                i += 1
        piece = line[start:].strip()
        if piece:
            segments.append(piece)
    return segments
