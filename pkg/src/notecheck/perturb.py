"""Seeded perturbation kernels that degrade reference notes.

Six kernels cover missing information (delete_sentence, delete_section),
poor flow and organization (coherence_shuffle, section_shuffle), and
redundancy/noise (repeat_sentence, irrelevant_sentence). Externally
generated factuality perturbations (prm_*) are load-only.

Sentence segmentation: bullet or numbered lines ("-", "*", "N.") are one
segment each; remaining prose splits on sentence terminators {. ! ?}
followed by whitespace. split_segments/join_segments reconstruct any
text exactly. Kernels operate on the stripped sentence list and render
perturbed sections canonically (bullets on their own lines, prose joined
by single spaces); prose sentences must end with a terminator for the
render/re-split round trip to preserve the sentence multiset, which the
bundled fixtures guarantee.

Randomness: per-(kind, seed, encounter, section) streams from Python's
Mersenne Twister, seeded with SHA-256 of the key, so outputs are stable
across platforms, processes, and parallel schedules.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import re
from dataclasses import dataclass

from .corpus import EMPTY, Encounter, NOTE_SECTIONS, SectionedNote
from .errors import DataError

logger = logging.getLogger(__name__)

KINDS = (
    "delete_sentence",
    "delete_section",
    "repeat_sentence",
    "coherence_shuffle",
    "section_shuffle",
    "irrelevant_sentence",
)
EXTERNAL_KINDS = (
    "prm_inaccuracy",
    "prm_hallucination",
    "prm_unhelpful",
    "prm_incomplete_step",
    "prm_paraphrase",
)
DEFAULT_FRACTION = 0.25

_BULLET = re.compile(r"^(?:[-*]|\d+[.)])\s+")
_SENTENCE_BREAK = re.compile(r"(?<=[.!?])(\s+)")


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    seed: int
    fraction: float = DEFAULT_FRACTION
    target_section: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown perturbation kind {self.kind!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise DataError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.target_section is not None and self.target_section not in NOTE_SECTIONS:
            raise DataError(f"unknown target section {self.target_section!r}")


@dataclass(frozen=True)
class PerturbedNote:
    source_encounter_id: str
    kind: str
    note: SectionedNote
    audit: tuple[dict, ...]
    spec: PerturbationSpec | None = None
    skipped: bool = False


def _is_bullet(core: str) -> bool:
    return bool(_BULLET.match(core))


def split_segments(text: str) -> tuple[str, list[tuple[str, str]]]:
    """Exact decomposition: (leading_ws, [(sentence, trailing_ws), ...]).

    Concatenating leading_ws and every sentence + trailing_ws in order
    reconstructs the input byte for byte.
    """
    if text == "":
        return "", []
    stripped_lead = text.lstrip()
    lead = text[: len(text) - len(stripped_lead)]
    raw_pieces: list[str] = []

    def flush_prose(block: str):
        if not block:
            return
        parts = _SENTENCE_BREAK.split(block)
        # parts alternate [chunk, ws, chunk, ws, ..., chunk]
        index = 0
        while index < len(parts):
            chunk = parts[index]
            trail = parts[index + 1] if index + 1 < len(parts) else ""
            if chunk:
                raw_pieces.append(chunk + trail)
            elif raw_pieces:
                raw_pieces[-1] += trail
            index += 2

    prose = ""
    for line in stripped_lead.splitlines(keepends=True):
        if _BULLET.match(line.strip()):
            flush_prose(prose)
            prose = ""
            raw_pieces.append(line)
        else:
            prose += line
    flush_prose(prose)

    pairs: list[tuple[str, str]] = []
    for raw in raw_pieces:
        core = raw.strip()
        head_len = len(raw) - len(raw.lstrip())
        head = raw[:head_len]
        if head:
            if pairs:
                prev_core, prev_trail = pairs[-1]
                pairs[-1] = (prev_core, prev_trail + head)
            else:
                lead += head
        if core:
            trail = raw[head_len + len(core):]
            pairs.append((core, trail))
        elif pairs:
            prev_core, prev_trail = pairs[-1]
            pairs[-1] = (prev_core, prev_trail + raw[head_len:])
    return lead, pairs


def join_segments(lead: str, pairs: list[tuple[str, str]]) -> str:
    """Inverse of split_segments."""
    return lead + "".join(core + trail for core, trail in pairs)


def segment_sentences(text: str) -> list[str]:
    """Stripped sentence/bullet segments of a section text."""
    if text == EMPTY:
        raise DataError("segment_sentences called on the EMPTY sentinel")
    return [core for core, _ in split_segments(text)[1]]


def render_sentences(cores: list[str]) -> str:
    """Canonical section text: bullets on their own line, prose spaced."""
    if not cores:
        return ""
    out = [cores[0]]
    for prev, core in zip(cores, cores[1:]):
        out.append("\n" if (_is_bullet(prev) or _is_bullet(core)) else " ")
        out.append(core)
    return "".join(out)


def _rng(kind: str, seed: int, encounter_id: str, section: str) -> random.Random:
    key = hashlib.sha256(f"{kind}|{seed}|{encounter_id}|{section}".encode()).digest()
    return random.Random(int.from_bytes(key[:8], "big"))


def _affected_count(fraction: float, n: int, cap: int) -> int:
    return max(1, min(cap, math.ceil(fraction * n)))


def apply(
    spec: PerturbationSpec,
    encounter: Encounter,
    corpus: list[Encounter] | None = None,
    evaluation_section: str | None = None,
) -> PerturbedNote:
    """Apply one perturbation kernel to one encounter's note.

    The corpus is needed only by irrelevant_sentence (donor notes);
    evaluation_section backs delete_section when the spec names no
    target. Output is a pure function of (spec, encounter, corpus order).
    """
    sections = dict(encounter.note.sections)
    audit: list[dict] = []
    changed = False

    if spec.kind == "delete_section":
        target = spec.target_section or evaluation_section
        if target is None:
            raise DataError("delete_section needs a target_section")
        if sections[target] == EMPTY:
            raise DataError(
                f"delete_section target {target!r} is already EMPTY in {encounter.id}"
            )
        sections[target] = EMPTY
        audit.append({"op": "delete_section", "section": target})
        changed = True
        return _result(encounter, spec, sections, audit, changed)

    if spec.kind == "irrelevant_sentence":
        donors_all = [e for e in (corpus or []) if e.id != encounter.id]
        if not donors_all:
            raise DataError(
                "irrelevant_sentence needs a corpus with at least one other encounter"
            )

    if spec.kind == "section_shuffle":
        return _section_shuffle(spec, encounter)

    for section in NOTE_SECTIONS:
        text = sections[section]
        if text == EMPTY:
            continue
        cores = segment_sentences(text)
        n = len(cores)
        rng = _rng(spec.kind, spec.seed, encounter.id, section)

        if spec.kind == "delete_sentence":
            if n <= 1:
                audit.append({"op": "skip", "section": section, "reason": "single_sentence"})
                continue
            count = _affected_count(spec.fraction, n, n - 1)
            indices = sorted(rng.sample(range(n), count))
            cores = [c for i, c in enumerate(cores) if i not in set(indices)]
            audit.append({"op": "delete_sentence", "section": section, "indices": indices})

        elif spec.kind == "repeat_sentence":
            count = _affected_count(spec.fraction, n, n)
            indices = sorted(rng.sample(range(n), count))
            for i in reversed(indices):
                cores.insert(i + 1, cores[i])
            audit.append({"op": "repeat_sentence", "section": section, "indices": indices})

        elif spec.kind == "coherence_shuffle":
            if n <= 1 or len(set(cores)) == 1:
                audit.append({"op": "skip", "section": section, "reason": "no_distinct_order"})
                continue
            perm = list(range(n))
            for _attempt in range(1000):
                rng.shuffle(perm)
                if [cores[p] for p in perm] != cores:
                    break
            else:
                audit.append({"op": "skip", "section": section, "reason": "no_distinct_order"})
                continue
            cores = [cores[p] for p in perm]
            audit.append({"op": "coherence_shuffle", "section": section, "permutation": perm})

        elif spec.kind == "irrelevant_sentence":
            donors = [e for e in donors_all if e.note.get(section) != EMPTY]
            if not donors:
                audit.append({"op": "skip", "section": section, "reason": "no_donor"})
                continue
            count = _affected_count(spec.fraction, n, n)
            inserted = []
            for _ in range(count):
                donor = rng.choice(donors)
                donor_cores = segment_sentences(donor.note.get(section))
                core = donor_cores[rng.randrange(len(donor_cores))]
                position = rng.randint(0, len(cores))
                cores.insert(position, core)
                inserted.append({"donor": donor.id, "position": position})
            audit.append({"op": "irrelevant_sentence", "section": section, "inserted": inserted})

        else:  # pragma: no cover - guarded by PerturbationSpec validation
            raise DataError(f"unhandled kind {spec.kind!r}")

        sections[section] = render_sentences(cores)
        changed = True

    return _result(encounter, spec, sections, audit, changed)


def _section_shuffle(spec: PerturbationSpec, encounter: Encounter) -> PerturbedNote:
    """Move every sentence to a random other non-EMPTY section, keeping
    arrival order within each destination."""
    sections = dict(encounter.note.sections)
    populated = [s for s in NOTE_SECTIONS if sections[s] != EMPTY]
    if len(populated) < 2:
        audit = ({"op": "skip", "reason": "fewer_than_two_sections"},)
        return PerturbedNote(
            source_encounter_id=encounter.id,
            kind=spec.kind,
            note=encounter.note,
            audit=audit,
            spec=spec,
            skipped=True,
        )
    arrivals: dict[str, list[str]] = {s: [] for s in populated}
    moves = []
    for section in populated:
        rng = _rng(spec.kind, spec.seed, encounter.id, section)
        others = [s for s in populated if s != section]
        for index, core in enumerate(segment_sentences(sections[section])):
            dest = others[rng.randrange(len(others))]
            arrivals[dest].append(core)
            moves.append({"from": section, "index": index, "to": dest})
    audit: list[dict] = [{"op": "section_shuffle", "moves": moves}]
    for section in populated:
        if arrivals[section]:
            sections[section] = render_sentences(arrivals[section])
        else:
            sections[section] = EMPTY
            audit.append({"op": "emptied", "section": section})
    return _result(encounter, spec, sections, audit, changed=True)


def _result(
    encounter: Encounter,
    spec: PerturbationSpec,
    sections: dict[str, str],
    audit: list[dict],
    changed: bool,
) -> PerturbedNote:
    note = SectionedNote(sections) if changed else encounter.note
    if not changed:
        logger.warning(
            "encounter %s not perturbable by %s; skipped", encounter.id, spec.kind
        )
    return PerturbedNote(
        source_encounter_id=encounter.id,
        kind=spec.kind,
        note=note,
        audit=tuple(audit),
        spec=spec,
        skipped=not changed,
    )


def perturb_corpus(
    spec: PerturbationSpec,
    encounters: list[Encounter],
    evaluation_section: str | None = None,
) -> list[PerturbedNote]:
    """One perturbed note per encounter, in encounter order."""
    return [
        apply(spec, encounter, encounters, evaluation_section)
        for encounter in encounters
    ]


def load_external_perturbations(path) -> list[PerturbedNote]:
    """Load externally generated perturbed notes (prm_* kinds).

    Records carry a source encounter id, a prm_* kind label, and the
    perturbed assessment-and-plan text; other sections load as EMPTY.
    These bypass the kernel enum, so kind goes verbatim into the audit.
    """
    from .corpus import read_jsonl

    notes: list[PerturbedNote] = []
    for lineno, record in read_jsonl(path):
        kind = record.get("kind")
        if kind not in EXTERNAL_KINDS:
            raise DataError(f"{path}:{lineno}: unknown external perturbation kind {kind!r}")
        source_id = record.get("source_id")
        if not source_id:
            raise DataError(f"{path}:{lineno}: external perturbation missing source_id")
        text = str(record.get("text", "")).strip()
        sections = {key: EMPTY for key in NOTE_SECTIONS}
        sections["assessment_and_plan"] = text if text else EMPTY
        notes.append(
            PerturbedNote(
                source_encounter_id=str(source_id),
                kind=kind,
                note=SectionedNote(sections),
                audit=({"op": "external", "kind": kind},),
                spec=None,
                skipped=False,
            )
        )
    return notes


def perturbed_record(note: PerturbedNote) -> dict:
    record = {
        "source_encounter_id": note.source_encounter_id,
        "kind": note.kind,
        "note": dict(note.note.sections),
        "skipped": note.skipped,
    }
    if note.spec is not None:
        record["seed"] = note.spec.seed
        record["fraction"] = note.spec.fraction
        record["target_section"] = note.spec.target_section
    return record


def perturbed_from_record(record: dict) -> PerturbedNote:
    spec = None
    if record.get("kind") in KINDS:
        spec = PerturbationSpec(
            kind=record["kind"],
            seed=int(record.get("seed", 0)),
            fraction=float(record.get("fraction", DEFAULT_FRACTION)),
            target_section=record.get("target_section"),
        )
    return PerturbedNote(
        source_encounter_id=record["source_encounter_id"],
        kind=record["kind"],
        note=SectionedNote(dict(record["note"])),
        audit=(),
        spec=spec,
        skipped=bool(record.get("skipped", False)),
    )
