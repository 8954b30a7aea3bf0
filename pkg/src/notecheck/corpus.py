"""Data model and file I/O for feedback, encounters, and preference pairs.

All record files are UTF-8 JSONL, one record per line:

    feedback    {"id", "text", "rating", "section", "encounter_id"?}
    encounters  {"id", "transcript", "note": {"<section>": "<text>"}}
    pairs       {"id", "transcript", "note_a", "note_b", "section", "preferred"}

Note sections are the four canonical keys below; a missing or blank
section is stored as the literal sentinel "EMPTY".
"""

from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError

logger = logging.getLogger(__name__)

NOTE_SECTIONS = (
    "subjective",
    "objective_exam",
    "objective_results",
    "assessment_and_plan",
)
# Feedback may also be tagged as applying to the whole note.
FEEDBACK_SECTIONS = NOTE_SECTIONS + ("full",)
EMPTY = "EMPTY"
MIN_FEEDBACK_WORDS = 3  # strictly more than 2 whitespace tokens


@dataclass(frozen=True)
class FeedbackItem:
    """One free-text feedback string with its 1-5 star rating."""

    id: str
    text: str
    star_rating: int
    section: str
    encounter_id: str | None = None

    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class SectionedNote:
    """A clinical note as a map over the four canonical sections."""

    sections: dict[str, str]

    def __post_init__(self):
        keys = set(self.sections)
        if keys != set(NOTE_SECTIONS):
            raise DataError(
                f"note must have exactly the sections {list(NOTE_SECTIONS)}, got {sorted(keys)}"
            )

    def get(self, section: str) -> str:
        if section not in NOTE_SECTIONS:
            raise DataError(f"unknown note section {section!r}")
        return self.sections[section]

    def replace_section(self, section: str, text: str) -> "SectionedNote":
        updated = dict(self.sections)
        updated[section] = text
        return SectionedNote(updated)

    def rendered(self) -> str:
        """Full-note text, one labelled block per non-EMPTY section."""
        blocks = []
        for key in NOTE_SECTIONS:
            blocks.append(f"[{key}]\n{self.sections[key]}")
        return "\n\n".join(blocks)


@dataclass(frozen=True)
class Encounter:
    """A transcript paired with its reference note."""

    id: str
    transcript: str
    note: SectionedNote


@dataclass(frozen=True)
class PreferencePair:
    """Two candidate notes for one transcript with an expert-marked winner."""

    id: str
    transcript: str
    note_a: str
    note_b: str
    section: str
    preferred: str  # "a" or "b"


@dataclass(frozen=True)
class Provenance:
    source: str
    section_filter: str | None = None


@dataclass
class FeedbackCorpus:
    """Ordered feedback items plus where they came from."""

    items: list[FeedbackItem]
    provenance: Provenance

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[FeedbackItem]:
        return iter(self.items)

    def ids(self) -> list[str]:
        return [item.id for item in self.items]


# -- JSONL plumbing (shared by every module that persists records) --


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) pairs; blank lines are skipped."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise DataError(f"{path}:{lineno}: record is not an object")
        yield lineno, record


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    """Write records atomically (temp file + rename), keys sorted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            handle.write("\n")
    os.replace(tmp, path)


def write_text(path: str | Path, text: str) -> None:
    """Atomic full-file text write."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


# -- feedback --


def load_feedback(path: str | Path, section_filter: str | None = None) -> FeedbackCorpus:
    """Load feedback records, dropping items of 2 words or fewer.

    Malformed lines are skipped with a logged warning naming the line
    number. A rating outside 1-5, an unknown section tag, or a duplicate
    id is a hard error.
    """
    if section_filter is not None and section_filter not in FEEDBACK_SECTIONS:
        raise DataError(f"unknown section filter {section_filter!r}")
    items: list[FeedbackItem] = []
    seen: dict[str, int] = {}
    duplicates: list[str] = []
    for lineno, record in read_jsonl(path):
        try:
            item_id = str(record["id"])
            text = str(record["text"])
            rating = record["rating"]
            section = str(record["section"])
        except KeyError as exc:
            logger.warning("%s:%d: missing field %s; line skipped", path, lineno, exc)
            continue
        if not isinstance(rating, int) or isinstance(rating, bool):
            logger.warning("%s:%d: non-integer rating %r; line skipped", path, lineno, rating)
            continue
        if not 1 <= rating <= 5:
            raise DataError(f"{path}:{lineno}: rating {rating} outside 1-5 for id {item_id!r}")
        if section not in FEEDBACK_SECTIONS:
            raise DataError(f"{path}:{lineno}: unknown section {section!r} for id {item_id!r}")
        if item_id in seen:
            duplicates.append(item_id)
            continue
        seen[item_id] = lineno
        item = FeedbackItem(
            id=item_id,
            text=text,
            star_rating=rating,
            section=section,
            encounter_id=record.get("encounter_id"),
        )
        if item.word_count() < MIN_FEEDBACK_WORDS:
            logger.warning(
                "%s:%d: feedback %r has %d word(s) (need >2); excluded",
                path, lineno, item_id, item.word_count(),
            )
            continue
        if section_filter is not None and item.section != section_filter:
            continue
        items.append(item)
    if duplicates:
        raise DataError(f"{path}: duplicate feedback id(s): {sorted(set(duplicates))}")
    return FeedbackCorpus(
        items=items,
        provenance=Provenance(source=str(path), section_filter=section_filter),
    )


def save_feedback(corpus: FeedbackCorpus, path: str | Path) -> None:
    write_jsonl(path, (feedback_record(item) for item in corpus.items))


def feedback_record(item: FeedbackItem) -> dict:
    record = {
        "id": item.id,
        "text": item.text,
        "rating": item.star_rating,
        "section": item.section,
    }
    if item.encounter_id is not None:
        record["encounter_id"] = item.encounter_id
    return record


def split_batches(
    corpus: FeedbackCorpus, batch_count: int, seed: int
) -> list[list[FeedbackItem]]:
    """Seeded random partition into batches whose sizes differ by at most one."""
    if batch_count < 1:
        raise DataError(f"batch_count must be >= 1, got {batch_count}")
    n = len(corpus.items)
    if n == 0:
        raise DataError("cannot batch an empty corpus")
    if batch_count > n:
        raise DataError(f"batch_count {batch_count} exceeds corpus size {n}")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    base, extra = divmod(n, batch_count)
    batches: list[list[FeedbackItem]] = []
    start = 0
    for b in range(batch_count):
        size = base + (1 if b < extra else 0)
        batches.append([corpus.items[i] for i in order[start : start + size]])
        start += size
    return batches


# -- encounters --


def load_encounters(path: str | Path) -> list[Encounter]:
    """Load encounters from one JSONL file or a directory of them.

    Every note is normalized to exactly the four canonical sections;
    absent or blank sections become "EMPTY". An unknown section key or a
    missing transcript is a hard error.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.jsonl"))
        if not files:
            raise DataError(f"no .jsonl files in directory {path}")
    else:
        files = [path]
    encounters: list[Encounter] = []
    seen: set[str] = set()
    for file in files:
        for lineno, record in read_jsonl(file):
            enc_id = str(record.get("id", ""))
            if not enc_id:
                raise DataError(f"{file}:{lineno}: encounter record missing id")
            transcript = record.get("transcript")
            if not transcript or not str(transcript).strip():
                raise DataError(f"{file}:{lineno}: encounter {enc_id!r} missing transcript")
            raw_note = record.get("note", {})
            if not isinstance(raw_note, dict):
                raise DataError(f"{file}:{lineno}: encounter {enc_id!r} note is not an object")
            unknown = sorted(set(raw_note) - set(NOTE_SECTIONS))
            if unknown:
                raise DataError(
                    f"{file}:{lineno}: encounter {enc_id!r} has unknown note section(s) {unknown}"
                )
            sections = {}
            for key in NOTE_SECTIONS:
                value = str(raw_note.get(key, "")).strip()
                sections[key] = value if value else EMPTY
            if enc_id in seen:
                raise DataError(f"{file}:{lineno}: duplicate encounter id {enc_id!r}")
            seen.add(enc_id)
            encounters.append(
                Encounter(id=enc_id, transcript=str(transcript), note=SectionedNote(sections))
            )
    return encounters


def save_encounters(encounters: Iterable[Encounter], path: str | Path) -> None:
    write_jsonl(path, (encounter_record(e) for e in encounters))


def encounter_record(encounter: Encounter) -> dict:
    return {
        "id": encounter.id,
        "transcript": encounter.transcript,
        "note": dict(encounter.note.sections),
    }


def section_text(encounter: Encounter, section: str) -> str:
    """Text the judge sees for a section; "full" means the rendered note."""
    if section == "full":
        return encounter.note.rendered()
    return encounter.note.get(section)


# -- preference pairs --


def load_preference_pairs(path: str | Path, section: str) -> list[PreferencePair]:
    """Load pairs for one section, collapsing duplicates.

    Two records that share a transcript and the same unordered pair of
    notes are the same comparison; the first occurrence wins.
    """
    if section not in FEEDBACK_SECTIONS:
        raise DataError(f"unknown section {section!r}")
    pairs: list[PreferencePair] = []
    seen_keys: set[tuple[str, frozenset[str]]] = set()
    for lineno, record in read_jsonl(path):
        pair_id = str(record.get("id", f"line{lineno}"))
        preferred = record.get("preferred")
        if preferred not in ("a", "b"):
            raise DataError(
                f"{path}:{lineno}: pair {pair_id!r} preferred must be 'a' or 'b', got {preferred!r}"
            )
        note_a = str(record.get("note_a", ""))
        note_b = str(record.get("note_b", ""))
        if not note_a or not note_b:
            raise DataError(f"{path}:{lineno}: pair {pair_id!r} missing note_a/note_b")
        if note_a == note_b:
            raise DataError(f"{path}:{lineno}: pair {pair_id!r} has identical notes")
        pair_section = str(record.get("section", ""))
        if pair_section not in FEEDBACK_SECTIONS:
            raise DataError(f"{path}:{lineno}: unknown section {pair_section!r}")
        if pair_section != section:
            continue
        key = (str(record.get("transcript", "")), frozenset((note_a, note_b)))
        if key in seen_keys:
            continue
        seen_keys.add(key)
        pairs.append(
            PreferencePair(
                id=pair_id,
                transcript=str(record.get("transcript", "")),
                note_a=note_a,
                note_b=note_b,
                section=pair_section,
                preferred=preferred,
            )
        )
    return pairs


def save_preference_pairs(pairs: Iterable[PreferencePair], path: str | Path) -> None:
    write_jsonl(
        path,
        (
            {
                "id": p.id,
                "transcript": p.transcript,
                "note_a": p.note_a,
                "note_b": p.note_b,
                "section": p.section,
                "preferred": p.preferred,
            }
            for p in pairs
        ),
    )
