"""Coverage-matrix construction and checklist subset selection.

The coverage matrix records which questions address which feedback
items (decided by an assigner model). Selection maximizes

    Score(k) = alpha * C + (1 - alpha) * D - lambda * k

where C is the fraction of feedback covered by at least one selected
question and D is one minus the average pairwise Jaccard similarity of
the selected questions' covered-feedback sets. A beam search grows
subsets one question at a time and returns the best subset seen at any
size up to k_max.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import parsing
from .corpus import FeedbackCorpus
from .distill import ChecklistQuestion
from .errors import DataError
from .prompts import PromptLibrary, STRICT_LIST_RETRY_SUFFIX
from .provider import ChatRequest, Provider

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoverageMatrix:
    """Boolean question x feedback incidence, immutable once built."""

    question_ids: tuple[str, ...]
    feedback_ids: tuple[str, ...]
    cells: tuple[tuple[bool, ...], ...]  # rows follow question_ids

    def __post_init__(self):
        if len(self.cells) != len(self.question_ids):
            raise DataError("coverage matrix row count does not match question ids")
        for row in self.cells:
            if len(row) != len(self.feedback_ids):
                raise DataError("coverage matrix column count does not match feedback ids")
        if len(set(self.question_ids)) != len(self.question_ids):
            raise DataError("duplicate question ids in coverage matrix")
        if len(set(self.feedback_ids)) != len(self.feedback_ids):
            raise DataError("duplicate feedback ids in coverage matrix")

    def row_index(self, question_id: str) -> int:
        try:
            return self.question_ids.index(question_id)
        except ValueError:
            raise DataError(f"unknown question id {question_id!r}") from None

    def covered_set(self, question_id: str) -> frozenset[str]:
        row = self.cells[self.row_index(question_id)]
        return frozenset(
            fid for fid, covered in zip(self.feedback_ids, row) if covered
        )

    def to_record(self) -> dict:
        return {
            "question_ids": list(self.question_ids),
            "feedback_ids": list(self.feedback_ids),
            "cells": [[1 if c else 0 for c in row] for row in self.cells],
        }

    @staticmethod
    def from_record(record: dict) -> "CoverageMatrix":
        return CoverageMatrix(
            question_ids=tuple(record["question_ids"]),
            feedback_ids=tuple(record["feedback_ids"]),
            cells=tuple(tuple(bool(c) for c in row) for row in record["cells"]),
        )


@dataclass(frozen=True)
class SelectionConfig:
    alpha: float = 0.5
    lam: float = 0.0005  # length penalty (the lambda weight)
    beam_width: int = 32
    k_max: int = 25

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lam < 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")
        if self.beam_width < 1:
            raise DataError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.k_max < 1:
            raise DataError(f"k_max must be >= 1, got {self.k_max}")


@dataclass(frozen=True)
class SelectionResult:
    chosen: tuple[str, ...]
    k: int
    coverage: float
    diversity: float
    objective: float
    trace: tuple[dict, ...]  # one entry per beam step: best subset at that size


def build_coverage_matrix(
    provider: Provider,
    prompts: PromptLibrary,
    questions: list[ChecklistQuestion],
    feedback: FeedbackCorpus,
    model_id: str = "gpt-4o",
) -> CoverageMatrix:
    """One assigner call per feedback item against the itemized checklist.

    Out-of-range item numbers are dropped with a warning; a reply that
    stays unparseable after one retry counts as covering nothing.
    """
    if not questions:
        raise DataError("cannot build a coverage matrix with no questions")
    if not feedback.items:
        raise DataError("cannot build a coverage matrix with no feedback")
    itemized = "\n".join(f"{i}. {q.text}" for i, q in enumerate(questions, start=1))
    system = prompts.render("assigner_system", questions=itemized)
    columns: list[set[int]] = []
    for item in feedback.items:
        user = prompts.render("assigner_user", feedback=item.text)
        numbers = parsing.parse_index_list(provider.chat(
            ChatRequest(model_id=model_id, system=system, user=user)
        ).text)
        if numbers is None:
            numbers = parsing.parse_index_list(provider.chat(
                ChatRequest(
                    model_id=model_id, system=system,
                    user=user + STRICT_LIST_RETRY_SUFFIX,
                )
            ).text)
        if numbers is None:
            logger.warning(
                "assigner reply unparseable twice for feedback %s; treated as covering nothing",
                item.id,
            )
            numbers = []
        rows = set()
        for number in numbers:
            if 1 <= number <= len(questions):
                rows.add(number - 1)
            else:
                logger.warning(
                    "assigner cited item %d outside checklist of %d for feedback %s; dropped",
                    number, len(questions), item.id,
                )
        columns.append(rows)
    cells = tuple(
        tuple(i in columns[j] for j in range(len(feedback.items)))
        for i in range(len(questions))
    )
    return CoverageMatrix(
        question_ids=tuple(q.id for q in questions),
        feedback_ids=tuple(item.id for item in feedback.items),
        cells=cells,
    )


def _subset_rows(matrix: CoverageMatrix, subset) -> list[int]:
    return [matrix.row_index(qid) for qid in subset]


def coverage_rate(matrix: CoverageMatrix, subset) -> float:
    """Fraction of feedback items addressed by >= 1 subset question."""
    rows = _subset_rows(matrix, subset)
    m = len(matrix.feedback_ids)
    covered = 0
    for j in range(m):
        if any(matrix.cells[i][j] for i in rows):
            covered += 1
    return covered / m


def jaccard(matrix: CoverageMatrix, qid_i: str, qid_j: str) -> float:
    """|F_i intersect F_j| / |F_i union F_j|; 0 when both sets are empty."""
    row_i = matrix.cells[matrix.row_index(qid_i)]
    row_j = matrix.cells[matrix.row_index(qid_j)]
    inter = sum(1 for a, b in zip(row_i, row_j) if a and b)
    union = sum(1 for a, b in zip(row_i, row_j) if a or b)
    if union == 0:
        return 0.0
    return inter / union


def diversity(matrix: CoverageMatrix, subset) -> float:
    """Mean over the subset of (1 - average Jaccard to the others).

    Subsets of size <= 1 have diversity 1.0 by convention, keeping the
    objective total where the pairwise average is undefined.
    """
    ids = sorted(subset)
    _subset_rows(matrix, ids)  # validates membership
    n = len(ids)
    if n <= 1:
        return 1.0
    total = 0.0
    for i in range(n):
        pair_sum = 0.0
        for j in range(n):
            if i != j:
                pair_sum += jaccard(matrix, ids[i], ids[j])
        total += 1.0 - pair_sum / (n - 1)
    return total / n


def objective(matrix: CoverageMatrix, subset, config: SelectionConfig) -> float:
    """alpha * C + (1 - alpha) * D - lambda * k."""
    return objective_score(
        coverage_rate(matrix, subset),
        diversity(matrix, subset),
        len(set(subset)),
        config,
    )


def objective_score(coverage: float, diversity_value: float, k: int,
                    config: SelectionConfig) -> float:
    return config.alpha * coverage + (1.0 - config.alpha) * diversity_value - config.lam * k


def beam_search_select(matrix: CoverageMatrix, config: SelectionConfig) -> SelectionResult:
    """Best subset of size <= k_max under the objective.

    Subsets grow one question per step; the beam keeps the beam_width
    best partial subsets at each size. Ties break toward higher
    coverage, then the lexicographically smallest sorted id list, so
    the result is deterministic.

    Scoring inside the search is incremental over coverage bitmasks and
    a precomputed pairwise-Jaccard table; the returned result is
    re-scored with the canonical functions above.
    """
    n = len(matrix.question_ids)
    if n == 0:
        raise DataError("coverage matrix has no questions")
    k_max = min(config.k_max, n)
    all_ids = sorted(matrix.question_ids)
    m = len(matrix.feedback_ids)

    masks: dict[str, int] = {}
    for qid in all_ids:
        row = matrix.cells[matrix.row_index(qid)]
        mask = 0
        for j, covered in enumerate(row):
            if covered:
                mask |= 1 << j
        masks[qid] = mask

    similarity: dict[tuple[str, str], float] = {}
    for i, qa in enumerate(all_ids):
        for qb in all_ids[i + 1 :]:
            union = (masks[qa] | masks[qb]).bit_count()
            inter = (masks[qa] & masks[qb]).bit_count()
            value = 0.0 if union == 0 else inter / union
            similarity[(qa, qb)] = value
            similarity[(qb, qa)] = value

    def scores(k: int, mask: int, pair_sum: float) -> tuple[float, float, float]:
        cov = mask.bit_count() / m
        div = 1.0 if k <= 1 else 1.0 - (2.0 * pair_sum) / (k * (k - 1))
        return objective_score(cov, div, k, config), cov, div

    # Rank: higher objective, then higher coverage, then smallest id list.
    def rank(ids: tuple[str, ...], obj: float, cov: float):
        return (-obj, -cov, ids)

    # Beam entries: ids -> (mask, pair_sum over unordered pairs).
    beam: dict[tuple[str, ...], tuple[int, float]] = {(): (0, 0.0)}
    best: tuple[tuple[float, float, tuple[str, ...]], tuple[str, ...]] | None = None
    trace: list[dict] = []
    for _step in range(k_max):
        candidates: dict[tuple[str, ...], tuple[int, float]] = {}
        for ids, (mask, pair_sum) in beam.items():
            present = set(ids)
            for qid in all_ids:
                if qid in present:
                    continue
                grown = tuple(sorted(present | {qid}))
                if grown in candidates:
                    continue
                added = sum(similarity[(qid, other)] for other in ids)
                candidates[grown] = (mask | masks[qid], pair_sum + added)
        if not candidates:
            break
        ordered = sorted(
            (
                (rank(ids, *scores(len(ids), mask, psum)[:2]), ids, (mask, psum))
                for ids, (mask, psum) in candidates.items()
            ),
        )
        beam = {ids: state for _, ids, state in ordered[: config.beam_width]}
        top_rank, top_ids, top_state = ordered[0]
        obj, cov, div = scores(len(top_ids), *top_state)
        trace.append(
            {
                "k": len(top_ids),
                "chosen": list(top_ids),
                "coverage": cov,
                "diversity": div,
                "objective": obj,
            }
        )
        if best is None or top_rank < best[0]:
            best = (top_rank, top_ids)
    assert best is not None
    chosen = best[1]
    cov = coverage_rate(matrix, chosen)
    div = diversity(matrix, chosen)
    return SelectionResult(
        chosen=chosen,
        k=len(chosen),
        coverage=cov,
        diversity=div,
        objective=objective_score(cov, div, len(chosen), config),
        trace=tuple(trace),
    )
