"""Strict parsers for model replies.

Nothing here ever defaults: a reply that does not carry the expected
structure yields None (or raises), and the caller decides whether to
retry, warn, or fail. Silent defaults would bias pass rates.
"""

from __future__ import annotations

import re

_YES_NO_LEAD = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)
_YES_NO_WORD = re.compile(r"\b(yes|no)\b", re.IGNORECASE)
_ITEM_LINE = re.compile(r"^\s*(?:\d+[.)]|[-*])\s+(.*\S)\s*$")
_INDEX_SUFFIX = re.compile(
    r"[\[\(]\s*(?:covers|indices)?\s*:?\s*([\d\s,]*)[\]\)]\s*$", re.IGNORECASE
)
_BRACKET_LIST = re.compile(r"\[([\d\s,]*)\]")
_TAG_LINE = re.compile(
    r"^\s*(applicable|section_specific)\s*:\s*(yes|no)\b", re.IGNORECASE | re.MULTILINE
)


def parse_yes_no(text: str) -> str | None:
    """Extract an explicit yes/no token, or None if there is none.

    Accepts a leading answer token, else a reply whose body mentions
    exactly one of the two words; anything ambiguous is unparseable.
    """
    lead = _YES_NO_LEAD.match(text)
    if lead:
        return lead.group(1).lower()
    words = {w.lower() for w in _YES_NO_WORD.findall(text)}
    if len(words) == 1:
        return next(iter(words))
    return None


def parse_itemized(text: str) -> list[tuple[str, list[int] | None]]:
    """Parse numbered/bulleted lines into (body, indices) entries.

    Indices come from a trailing "[COVERS: 1, 3]"-style suffix (1-based,
    as written); None means the line carried no index list.
    """
    entries: list[tuple[str, list[int] | None]] = []
    for line in text.splitlines():
        match = _ITEM_LINE.match(line)
        if not match:
            continue
        body = match.group(1).strip()
        indices: list[int] | None = None
        suffix = _INDEX_SUFFIX.search(body)
        if suffix:
            digits = suffix.group(1)
            indices = [int(tok) for tok in re.findall(r"\d+", digits)]
            body = body[: suffix.start()].strip()
        if body:
            entries.append((body, indices))
    return entries


def parse_questions(text: str) -> list[tuple[str, list[int] | None]]:
    """Itemized entries that are questions (end with '?')."""
    return [(body, idx) for body, idx in parse_itemized(text) if body.endswith("?")]


def parse_index_list(text: str) -> list[int] | None:
    """Parse a list of item numbers; None if the reply is unparseable.

    An explicit empty list ("[]", "none") parses as no items.
    """
    stripped = text.strip()
    bracket = _BRACKET_LIST.search(stripped)
    if bracket:
        return [int(tok) for tok in re.findall(r"\d+", bracket.group(1))]
    if re.fullmatch(r"(?i)\s*(none|no questions?|n/a)\s*\.?\s*", stripped):
        return []
    numbers = re.findall(r"\d+", stripped)
    if numbers:
        return [int(tok) for tok in numbers]
    return None


def parse_tag_flags(text: str) -> tuple[bool, bool] | None:
    """Extract (applicable, section_specific) verdicts from a tagging reply.

    The last occurrence of each labelled line wins (the reasoning may
    restate them); missing either label makes the reply unparseable.
    """
    found: dict[str, bool] = {}
    for label, value in _TAG_LINE.findall(text):
        found[label.lower()] = value.lower() == "yes"
    if "applicable" in found and "section_specific" in found:
        return found["applicable"], found["section_specific"]
    return None


def first_question_line(text: str) -> str | None:
    """First line that reads as a question; tolerates list markers."""
    for line in text.splitlines():
        body = line.strip()
        item = _ITEM_LINE.match(line)
        if item:
            body = item.group(1).strip()
        if body.endswith("?"):
            return body
    return None
