"""LLM-as-a-judge scoring of notes against checklist questions.

A verdict is parsed only from an explicit yes/no token; an unparseable
reply is retried once with a stricter instruction and then recorded as
an error verdict, never defaulted. The checklist score of a note is the
proportion of questions answered "Yes".
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

from . import parsing
from .corpus import Encounter, section_text
from .distill import ChecklistQuestion
from .errors import DataError
from .prompts import PromptLibrary, STRICT_RETRY_SUFFIX
from .provider import ChatRequest, Provider

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Verdict:
    question_id: str
    note_ref: str
    answer: str  # "yes" | "no" | "error"
    raw: str

    @property
    def passed(self) -> bool:
        return self.answer == "yes"


@dataclass(frozen=True)
class NoteScore:
    note_ref: str
    checklist_id: str
    passed: int
    total: int
    score: float
    error_question_ids: tuple[str, ...] = ()

    @property
    def partial(self) -> bool:
        return bool(self.error_question_ids)


def checklist_id(questions: list[ChecklistQuestion]) -> str:
    digest = hashlib.sha256("|".join(sorted(q.id for q in questions)).encode()).hexdigest()
    return f"c{digest[:12]}"


class Judge:
    """Answers checklist questions about one note section at a time."""

    def __init__(self, provider: Provider, prompts: PromptLibrary,
                 model_id: str = "gpt-4o"):
        self.provider = provider
        self.prompts = prompts
        self.model_id = model_id

    def answer(
        self,
        question: ChecklistQuestion,
        transcript: str,
        section_text: str,
        note_ref: str = "adhoc",
    ) -> Verdict:
        """One yes/no verdict; the section may be the literal "EMPTY"."""
        user = self.prompts.render(
            "judge_user",
            transcript=transcript,
            section=question.section,
            section_text=section_text,
            question=question.text,
        )
        raw = self._ask(user)
        parsed = parsing.parse_yes_no(raw)
        if parsed is None:
            raw = self._ask(user + STRICT_RETRY_SUFFIX)
            parsed = parsing.parse_yes_no(raw)
        if parsed is None:
            logger.warning(
                "judge reply unparseable twice for question %s on %s: %r",
                question.id, note_ref, raw[:80],
            )
            return Verdict(question.id, note_ref, "error", raw)
        return Verdict(question.id, note_ref, parsed, raw)

    def _ask(self, user: str) -> str:
        return self.provider.chat(
            ChatRequest(
                model_id=self.model_id,
                system=self.prompts.get("judge_system"),
                user=user,
            )
        ).text

    def score_note(
        self,
        checklist: list[ChecklistQuestion],
        transcript: str,
        section_text: str,
        note_ref: str = "adhoc",
    ) -> NoteScore:
        """Proportion of checklist questions the note passes."""
        verdicts = self.verdicts_for_note(checklist, transcript, section_text, note_ref)
        return note_score_from_verdicts(checklist, verdicts, note_ref)

    def verdicts_for_note(
        self,
        checklist: list[ChecklistQuestion],
        transcript: str,
        section_text: str,
        note_ref: str = "adhoc",
    ) -> list[Verdict]:
        if not checklist:
            raise DataError("checklist is empty")
        return [
            self.answer(question, transcript, section_text, note_ref)
            for question in checklist
        ]

    def score_corpus(
        self,
        checklist: list[ChecklistQuestion],
        encounters: list[Encounter],
        section: str,
    ) -> list[NoteScore]:
        """Score every encounter's section; output ordered by encounter id.

        Provider-level caching means a reference note judged here is
        never re-judged by later perturbation runs.
        """
        if not encounters:
            raise DataError("no encounters to score")
        scores = []
        for encounter in sorted(encounters, key=lambda e: e.id):
            scores.append(
                self.score_note(
                    checklist,
                    encounter.transcript,
                    section_text(encounter, section),
                    note_ref=encounter.id,
                )
            )
        return scores

    def pass_table(
        self,
        checklist: list[ChecklistQuestion],
        notes: list[tuple[str, str, str]],
    ) -> dict[str, dict[str, bool]]:
        """Per-question, per-note pass booleans.

        notes are (note_ref, transcript, section_text) triples. Error
        verdicts raise: delta statistics must not silently count them.
        """
        if not checklist:
            raise DataError("checklist is empty")
        table: dict[str, dict[str, bool]] = {q.id: {} for q in checklist}
        for note_ref, transcript, text in notes:
            for question in checklist:
                verdict = self.answer(question, transcript, text, note_ref)
                if verdict.answer == "error":
                    raise DataError(
                        f"error verdict for question {question.id} on note {note_ref}"
                    )
                table[question.id][note_ref] = verdict.passed
        return table


def note_score_from_verdicts(
    checklist: list[ChecklistQuestion],
    verdicts: list[Verdict],
    note_ref: str,
) -> NoteScore:
    if not checklist:
        raise DataError("checklist is empty")
    passed = sum(1 for v in verdicts if v.answer == "yes")
    errors = tuple(sorted(v.question_id for v in verdicts if v.answer == "error"))
    return NoteScore(
        note_ref=note_ref,
        checklist_id=checklist_id(checklist),
        passed=passed,
        total=len(checklist),
        score=passed / len(checklist),
        error_question_ids=errors,
    )
