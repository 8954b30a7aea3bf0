"""Fixture-driven mock chat backend for fully offline pipeline runs.

The script file declares every question the mock knows (candidates,
merged forms, baseline), the feedback keyword each question covers, and
per-question judging behavior. The backend recognizes which pipeline
exchange a prompt belongs to by its template marker and answers
deterministically:

  proposer   emits a candidate when its anchor feedback text is in the
             batch, citing the indices of items carrying its keyword
  polarity   flags scripted wrong-direction texts and returns the
             scripted rewrite
  merge      returns the scripted consolidation for the group
  tagging    tags per script (default: applicable + section-specific)
  assigner   covers a feedback item iff its keyword is in the
             question's covers list
  rewriter   appends a violation marker naming the question key
  judge      passes untouched reference sections; on a marked rewrite
             answers "No" unless the question is scripted unenforceable;
             on other modifications applies the question's sensitivity
             class (completeness / organization / redundancy / accuracy
             / style) against the reference section

Everything is a pure function of (request, script, encounters), so two
processes produce identical transcripts of interaction.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import EMPTY, Encounter
from .errors import ProviderError
from .perturb import segment_sentences
from .provider import ChatRequest, MockEmbeddingBackend

VIOLATION_PREFIX = "[VIOLATES: "

_JUDGE_RE = re.compile(
    r"Transcript:\n(?P<transcript>.*?)\n\nNote section \((?P<section>\w+)\):\n"
    r"(?P<section_text>.*?)\n\nQuestion: (?P<question>[^\n]*)",
    re.DOTALL,
)
_REWRITER_RE = re.compile(
    r"Transcript: (?P<transcript>.*?)\n\nNote: (?P<note>.*?)\n\nQuestion: (?P<question>[^\n]*)",
    re.DOTALL,
)
_QUESTION_LINE_RE = re.compile(r"Question: (?P<question>[^\n]*)")
_FEEDBACK_LINE_RE = re.compile(r"Feedback: (?P<feedback>[^\n]*)")
_ITEM_RE = re.compile(r"^\s*(\d+)[.)]\s+(.*\S)\s*$")


@dataclass(frozen=True)
class ScriptQuestion:
    key: str
    text: str
    proposer_text: str
    keyword: str | None
    covers: tuple[str, ...]
    anchor_text: str | None
    group: str | None
    sensitivity_class: str
    sensitivity_threshold: int
    enforceable: bool
    applicable: bool
    section_specific: bool
    role: str  # candidate | merged | baseline


class MockScript:
    """Parsed mock script plus lookup tables."""

    def __init__(self, data: dict):
        self.dim = int(data.get("dim", 64))
        self.questions: list[ScriptQuestion] = []
        for raw in data["questions"]:
            sensitivity = raw.get("sensitivity") or {}
            self.questions.append(
                ScriptQuestion(
                    key=raw["key"],
                    text=raw["text"],
                    proposer_text=raw.get("proposer_text") or raw["text"],
                    keyword=raw.get("keyword"),
                    covers=tuple(raw.get("covers") or ()),
                    anchor_text=raw.get("anchor_text"),
                    group=raw.get("group"),
                    sensitivity_class=sensitivity.get("class", "style"),
                    sensitivity_threshold=int(sensitivity.get("threshold", 0)),
                    enforceable=bool(raw.get("enforceable", True)),
                    applicable=bool(raw.get("applicable", True)),
                    section_specific=bool(raw.get("section_specific", True)),
                    role=raw.get("role", "candidate"),
                )
            )
        self.merged_text: dict[str, str] = dict(data.get("merged") or {})
        self.polarity_rewrites: dict[str, str] = dict(data.get("polarity_rewrites") or {})
        self.by_text: dict[str, ScriptQuestion] = {}
        for question in self.questions:
            self.by_text[question.text] = question
            self.by_text.setdefault(question.proposer_text, question)
        self.overrides_raw: dict[str, dict] = dict(data.get("embedding_overrides") or {})

    @staticmethod
    def load(path: str | Path) -> "MockScript":
        return MockScript(json.loads(Path(path).read_text(encoding="utf-8")))

    def dense_overrides(self) -> dict[str, list[float]]:
        dense = {}
        for text, sparse in self.overrides_raw.items():
            vector = [0.0] * self.dim
            for index, value in sparse.items():
                vector[int(index)] = float(value)
            dense[text] = vector
        return dense

    def baseline_questions(self) -> list[ScriptQuestion]:
        return [q for q in self.questions if q.role == "baseline"]

    def candidates(self) -> list[ScriptQuestion]:
        return [q for q in self.questions if q.role == "candidate"]


class ScriptedPipelineBackend:
    """Chat backend replaying the scripted pipeline behaviors."""

    network = False

    def __init__(self, script: MockScript, encounters: list[Encounter]):
        self.script = script
        self.by_transcript = {e.transcript: e for e in encounters}
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        system, user = request.system, request.user
        if "itemized list of physician feedback" in system:
            return self._propose(user)
        if "Indicate which questions cover the feedback" in system:
            return self._assign(system, user)
        if "rewrite the note so that it fails" in system:
            return self._rewrite(user)
        if 'decide whether a "Yes" answer indicates a GOOD clinical note' in system:
            return self._polarity_check(user)
        if 'Rewrite it so that a "Yes" answer indicates a GOOD note' in system:
            return self._polarity_rewrite(user)
        if "Consolidate them into a single yes/no question" in system:
            return self._merge(user)
        if "Think step by step about the following two properties" in system:
            return self._tag(user)
        if "decide whether the note section meets the criterion" in system:
            return self._judge(user)
        if "You want to evaluate the quality of a clinical note" in system:
            return self._baseline()
        raise ProviderError(f"scripted mock cannot route prompt: {system[:80]!r}")

    # -- generation --

    def _baseline(self) -> str:
        lines = [
            f"{i}. {q.text}"
            for i, q in enumerate(self.script.baseline_questions(), start=1)
        ]
        return "\n".join(lines)

    def _propose(self, user: str) -> str:
        batch: list[tuple[int, str]] = []
        for line in user.splitlines():
            match = _ITEM_RE.match(line)
            if match:
                batch.append((int(match.group(1)), match.group(2)))
        batch_texts = {text for _, text in batch}
        lines = []
        number = 1
        for question in self.script.candidates():
            if question.anchor_text is None or question.anchor_text not in batch_texts:
                continue
            indices = [
                str(index)
                for index, text in batch
                if question.keyword and question.keyword in text
            ]
            lines.append(
                f"{number}. {question.proposer_text} [COVERS: {', '.join(indices)}]"
            )
            number += 1
        if not lines:
            return "No checklist questions arise from this feedback batch."
        return "\n".join(lines)

    # -- polarity --

    def _polarity_check(self, user: str) -> str:
        question = self._question_from(user)
        return "No" if question in self.script.polarity_rewrites else "Yes"

    def _polarity_rewrite(self, user: str) -> str:
        question = self._question_from(user)
        return self.script.polarity_rewrites.get(question, question)

    # -- dedup merge --

    def _merge(self, user: str) -> str:
        members = [
            line.strip()[2:].strip()
            for line in user.splitlines()
            if line.strip().startswith("- ")
        ]
        groups = {
            entry.group
            for text in members
            if (entry := self.script.by_text.get(text)) is not None and entry.group
        }
        if len(groups) == 1:
            merged = self.script.merged_text.get(next(iter(groups)))
            if merged:
                return merged
        # exact-duplicate or unknown cluster: first member already consolidates it
        if members:
            return members[0]
        raise ProviderError("merge prompt carried no member questions")

    # -- tagging --

    def _tag(self, user: str) -> str:
        question = self._question_from(user)
        entry = self.script.by_text.get(question)
        applicable = entry.applicable if entry else True
        section_specific = entry.section_specific if entry else True
        return (
            "The question applies to routine encounters and reads from this section alone.\n"
            f"APPLICABLE: {'Yes' if applicable else 'No'}\n"
            f"SECTION_SPECIFIC: {'Yes' if section_specific else 'No'}"
        )

    # -- coverage assignment --

    def _assign(self, system: str, user: str) -> str:
        feedback_match = _FEEDBACK_LINE_RE.search(user)
        if not feedback_match:
            raise ProviderError("assigner prompt carried no feedback line")
        feedback = feedback_match.group(1)
        listed: list[tuple[int, str]] = []
        for line in system.splitlines():
            match = _ITEM_RE.match(line)
            if match:
                listed.append((int(match.group(1)), match.group(2)))
        covering = []
        for number, text in listed:
            entry = self.script.by_text.get(text)
            if entry and any(keyword in feedback for keyword in entry.covers):
                covering.append(number)
        return f"[{', '.join(str(n) for n in covering)}]"

    # -- enforceability rewrites --

    def _rewrite(self, user: str) -> str:
        match = _REWRITER_RE.search(user)
        if not match:
            raise ProviderError("rewriter prompt did not parse")
        note = match.group("note")
        question = match.group("question")
        entry = self.script.by_text.get(question)
        key = entry.key if entry else "unknown"
        return f"{note}\n{VIOLATION_PREFIX}{key}]"

    # -- judging --

    def _judge(self, user: str) -> str:
        match = _JUDGE_RE.search(user)
        if not match:
            raise ProviderError("judge prompt did not parse")
        section = match.group("section")
        section_text = match.group("section_text")
        question = match.group("question")
        entry = self.script.by_text.get(question)
        if entry is None:
            return "Yes"
        marker = f"{VIOLATION_PREFIX}{entry.key}]"
        if marker in section_text:
            return "Yes" if not entry.enforceable else "No"
        encounter = self.by_transcript.get(match.group("transcript"))
        if encounter is None or section not in encounter.note.sections:
            return "Yes"
        reference = encounter.note.sections[section]
        if section_text == reference:
            return "Yes"
        ref_cores = [] if reference == EMPTY else segment_sentences(reference)
        cur_cores = (
            []
            if section_text == EMPTY
            else segment_sentences(self._strip_markers(section_text))
        )
        return self._sensitivity_verdict(entry, ref_cores, cur_cores)

    @staticmethod
    def _strip_markers(text: str) -> str:
        return "\n".join(
            line for line in text.splitlines() if not line.startswith(VIOLATION_PREFIX)
        )

    @staticmethod
    def _sensitivity_verdict(
        entry: ScriptQuestion, ref: list[str], cur: list[str]
    ) -> str:
        ref_set = set(ref)
        foreign = any(core not in ref_set for core in cur)
        missing = any(core not in set(cur) for core in ref)
        if entry.sensitivity_class == "completeness":
            failed = len(cur) < len(ref) - entry.sensitivity_threshold
        elif entry.sensitivity_class == "organization":
            pure_reorder = Counter(cur) == Counter(ref) and cur != ref
            failed = pure_reorder or (foreign and missing)
        elif entry.sensitivity_class == "redundancy":
            failed = len(cur) > len(ref) or any(n > 1 for n in Counter(cur).values())
        elif entry.sensitivity_class == "accuracy":
            failed = foreign
        else:  # style: insensitive to structural degradation
            failed = False
        return "No" if failed else "Yes"

    def _question_from(self, user: str) -> str:
        match = _QUESTION_LINE_RE.search(user)
        if not match:
            raise ProviderError("prompt carried no question line")
        return match.group("question")


def build_mock_backends(
    script_path: str | Path, encounters: list[Encounter]
) -> tuple[ScriptedPipelineBackend, MockEmbeddingBackend]:
    """Chat + embedding backends wired from one script file."""
    script = MockScript.load(script_path)
    chat = ScriptedPipelineBackend(script, encounters)
    embed = MockEmbeddingBackend(
        dim=script.dim, seed=0, overrides=script.dense_overrides()
    )
    return chat, embed
