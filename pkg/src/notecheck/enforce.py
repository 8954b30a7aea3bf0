"""Enforceability unit tests for checklist questions.

Each question gets a mini-benchmark: reference notes that pass it are
rewritten (by the provider) to fail it, and the judge re-scores the
rewrites. The enforceability rate is the proportion of rewrites that
correctly come back "No"; questions whose rate falls below the keep
threshold are discarded as not reliably enforceable by an LLM judge.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass, replace

from .corpus import Encounter, section_text
from .distill import ChecklistQuestion
from .errors import DataError, UntestableQuestionError
from .prompts import PromptLibrary
from .provider import ChatRequest, Provider
from .judge import Judge

logger = logging.getLogger(__name__)

DEFAULT_CASES_PER_QUESTION = 10
KEEP_THRESHOLD = 0.7  # kept iff rate >= threshold (strictly-below is discarded)


@dataclass(frozen=True)
class UnitTestCase:
    question_id: str
    encounter_id: str
    original_section_text: str
    rewritten_section_text: str
    original_verdict: str = "yes"
    rewritten_verdict: str = "pending"  # yes | no | pending


@dataclass(frozen=True)
class EnforceabilityReport:
    question_id: str
    rate: float
    cases: tuple[UnitTestCase, ...]
    kept: bool


def enforceability_rate(
    question: ChecklistQuestion,
    cases: list[UnitTestCase],
    threshold: float = KEEP_THRESHOLD,
) -> EnforceabilityReport:
    """Rate = fraction of rewrites judged "No"; kept iff rate >= threshold."""
    if not cases:
        raise DataError(f"no unit test cases for question {question.id}")
    unresolved = [c.encounter_id for c in cases if c.rewritten_verdict == "pending"]
    if unresolved:
        raise DataError(
            f"unresolved rewritten verdicts for question {question.id}: {unresolved[:5]}"
        )
    failures = sum(1 for c in cases if c.rewritten_verdict == "no")
    rate = failures / len(cases)
    return EnforceabilityReport(
        question_id=question.id,
        rate=rate,
        cases=tuple(cases),
        kept=rate >= threshold,
    )


def checklist_enforceability(reports: list[EnforceabilityReport]) -> float:
    """Unweighted mean of per-question rates."""
    if not reports:
        raise DataError("no enforceability reports to average")
    return sum(r.rate for r in reports) / len(reports)


def _question_rng(seed: int, question_id: str) -> random.Random:
    key = hashlib.sha256(f"{seed}|{question_id}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(key[:8], "big"))


class Enforcer:
    """Runs the unit-test benchmark for each question."""

    def __init__(
        self,
        provider: Provider,
        prompts: PromptLibrary,
        judge: Judge,
        rewriter_model: str = "gpt-4.1-mini",
        cases_per_question: int = DEFAULT_CASES_PER_QUESTION,
        threshold: float = KEEP_THRESHOLD,
    ):
        self.provider = provider
        self.prompts = prompts
        self.judge = judge
        self.rewriter_model = rewriter_model
        self.cases_per_question = cases_per_question
        self.threshold = threshold

    def sample_passing_notes(
        self,
        question: ChecklistQuestion,
        encounters: list[Encounter],
        n: int | None = None,
        seed: int = 0,
    ) -> list[Encounter]:
        """Seeded sample of encounters whose section passes the question.

        Judges every encounter; returns min(n, #passing) of them. Zero
        passing encounters makes the question untestable.
        """
        n = self.cases_per_question if n is None else n
        if n < 1:
            raise DataError("sample size must be >= 1")
        passing = []
        for encounter in sorted(encounters, key=lambda e: e.id):
            verdict = self.judge.answer(
                question, encounter.transcript,
                section_text(encounter, question.section), encounter.id,
            )
            if verdict.answer == "yes":
                passing.append(encounter)
        if not passing:
            raise UntestableQuestionError(
                f"no encounter passes question {question.id}; cannot unit-test it"
            )
        if len(passing) <= n:
            if len(passing) < n:
                logger.warning(
                    "only %d of %d requested passing notes for question %s",
                    len(passing), n, question.id,
                )
            return passing
        rng = _question_rng(seed, question.id)
        sampled = rng.sample(passing, n)
        return sorted(sampled, key=lambda e: e.id)

    def rewrite_to_fail(
        self, question: ChecklistQuestion, encounter: Encounter
    ) -> UnitTestCase | None:
        """Rewrite the encounter's section so it fails the question.

        Returns None when the provider echoes the original twice: such a
        case measures the rewriter, not the question, and is excluded
        from the denominator.
        """
        original = section_text(encounter, question.section)
        for attempt in (1, 2):
            user = self.prompts.render(
                "rewriter_user",
                transcript=encounter.transcript,
                note=original,
                question=question.text,
            )
            if attempt == 2:
                user += "\n(The previous rewrite was identical to the original; it must differ.)"
            response = self.provider.chat(
                ChatRequest(
                    model_id=self.rewriter_model,
                    system=self.prompts.get("rewriter_system"),
                    user=user,
                    max_tokens=4096,
                )
            )
            rewritten = response.text.strip()
            if rewritten and rewritten != original:
                return UnitTestCase(
                    question_id=question.id,
                    encounter_id=encounter.id,
                    original_section_text=original,
                    rewritten_section_text=rewritten,
                )
        logger.warning(
            "rewriter returned the original text twice for question %s on %s; case invalid",
            question.id, encounter.id,
        )
        return None

    def run_question(
        self,
        question: ChecklistQuestion,
        encounters: list[Encounter],
        seed: int = 0,
    ) -> EnforceabilityReport:
        """Full mini-benchmark: sample, rewrite, judge, rate."""
        sampled = self.sample_passing_notes(question, encounters, seed=seed)
        cases: list[UnitTestCase] = []
        for encounter in sampled:
            case = self.rewrite_to_fail(question, encounter)
            if case is None:
                continue
            verdict = self.judge.answer(
                question, encounter.transcript,
                case.rewritten_section_text, f"{encounter.id}:rewrite",
            )
            if verdict.answer == "error":
                logger.warning(
                    "judge error on rewritten note for question %s on %s; case excluded",
                    question.id, encounter.id,
                )
                continue
            cases.append(replace(case, rewritten_verdict=verdict.answer))
        if not cases:
            raise UntestableQuestionError(
                f"no valid unit-test cases for question {question.id}"
            )
        return enforceability_rate(question, cases, self.threshold)
