"""Candidate checklist question generation and refinement.

Generation is either zero-shot (baseline) or conditioned on batches of
user feedback. Refinement normalizes question polarity (a "Yes" answer
must mean a good note), merges near-duplicates found by embedding
similarity clustering, and keeps only questions tagged both generally
applicable and section-specific.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

from . import parsing
from .corpus import FEEDBACK_SECTIONS, FeedbackItem
from .errors import DataError, OutputParseError
from .prompts import PromptLibrary
from .provider import ChatRequest, EmbeddingVector, Provider, cosine_similarity

logger = logging.getLogger(__name__)

DEDUP_THRESHOLD = 0.85


def question_id(text: str, section: str) -> str:
    """Stable content id: hash of (text, section)."""
    digest = hashlib.sha256(f"{section}|{text}".encode("utf-8")).hexdigest()
    return f"q{digest[:12]}"


@dataclass(frozen=True)
class QuestionTags:
    applicable: bool | None = None
    section_specific: bool | None = None


@dataclass(frozen=True)
class ChecklistQuestion:
    """A yes/no criterion where "Yes" denotes a good note."""

    id: str
    text: str
    section: str
    origin: str  # baseline | feedback | merged
    cluster_members: tuple[str, ...] = ()
    covered_feedback_hint: tuple[str, ...] = ()
    tags: QuestionTags = field(default_factory=QuestionTags)
    enforceability: float | None = None

    def __post_init__(self):
        if not self.text.endswith("?"):
            raise DataError(f"question text must end with '?': {self.text!r}")
        if self.section not in FEEDBACK_SECTIONS:
            raise DataError(f"unknown section {self.section!r}")
        if self.origin not in ("baseline", "feedback", "merged"):
            raise DataError(f"unknown origin {self.origin!r}")
        if (self.origin == "merged") != bool(self.cluster_members):
            raise DataError("cluster_members must be nonempty iff origin is 'merged'")


def make_question(
    text: str,
    section: str,
    origin: str,
    cluster_members: tuple[str, ...] = (),
    covered_feedback_hint: tuple[str, ...] = (),
    tags: QuestionTags = QuestionTags(),
    enforceability: float | None = None,
) -> ChecklistQuestion:
    return ChecklistQuestion(
        id=question_id(text, section),
        text=text,
        section=section,
        origin=origin,
        cluster_members=cluster_members,
        covered_feedback_hint=covered_feedback_hint,
        tags=tags,
        enforceability=enforceability,
    )


def question_record(q: ChecklistQuestion) -> dict:
    return {
        "id": q.id,
        "text": q.text,
        "section": q.section,
        "origin": q.origin,
        "cluster_members": list(q.cluster_members),
        "covered_feedback_hint": list(q.covered_feedback_hint),
        "tags": {
            "applicable": q.tags.applicable,
            "section_specific": q.tags.section_specific,
        },
        "enforceability": q.enforceability,
    }


def question_from_record(record: dict) -> ChecklistQuestion:
    tags = record.get("tags") or {}
    return ChecklistQuestion(
        id=record["id"],
        text=record["text"],
        section=record["section"],
        origin=record["origin"],
        cluster_members=tuple(record.get("cluster_members") or ()),
        covered_feedback_hint=tuple(record.get("covered_feedback_hint") or ()),
        tags=QuestionTags(tags.get("applicable"), tags.get("section_specific")),
        enforceability=record.get("enforceability"),
    )


@dataclass(frozen=True)
class SimilarityGraph:
    """Questions as nodes, an edge wherever cosine >= threshold."""

    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]  # canonical (min_id, max_id) pairs
    threshold: float


def build_similarity_graph(
    questions: list[ChecklistQuestion],
    vectors: list[EmbeddingVector],
    threshold: float = DEDUP_THRESHOLD,
) -> SimilarityGraph:
    """Edge (i, j) iff cosine(i, j) >= threshold (inclusive)."""
    if len(questions) != len(vectors):
        raise DataError(
            f"{len(questions)} questions but {len(vectors)} vectors"
        )
    ids = [q.id for q in questions]
    if len(set(ids)) != len(ids):
        raise DataError("duplicate question ids in similarity graph input")
    edges = set()
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            if cosine_similarity(vectors[i], vectors[j]) >= threshold:
                edges.add((min(ids[i], ids[j]), max(ids[i], ids[j])))
    return SimilarityGraph(nodes=tuple(ids), edges=frozenset(edges), threshold=threshold)


def clusters(graph: SimilarityGraph) -> list[list[str]]:
    """Connected components; isolated nodes become singletons.

    Components are sorted by their smallest member id, members sorted
    within, so output is deterministic.
    """
    adjacency: dict[str, set[str]] = {node: set() for node in graph.nodes}
    for a, b in graph.edges:
        adjacency[a].add(b)
        adjacency[b].add(a)
    seen: set[str] = set()
    components: list[list[str]] = []
    for node in sorted(graph.nodes):
        if node in seen:
            continue
        stack = [node]
        component = []
        seen.add(node)
        while stack:
            current = stack.pop()
            component.append(current)
            for neighbor in adjacency[current]:
                if neighbor not in seen:
                    seen.add(neighbor)
                    stack.append(neighbor)
        components.append(sorted(component))
    components.sort(key=lambda c: c[0])
    return components


@dataclass
class RefineResult:
    kept: list[ChecklistQuestion]
    dropped: list[tuple[ChecklistQuestion, str]]
    dedup_passes: int


class Distiller:
    """Provider-backed question generation and refinement."""

    def __init__(
        self,
        provider: Provider,
        prompts: PromptLibrary,
        generator_model: str = "gpt-4o",
        embedding_model: str = "text-embedding-3-large",
        tagging_model: str = "o3-mini",
        dedup_threshold: float = DEDUP_THRESHOLD,
    ):
        self.provider = provider
        self.prompts = prompts
        self.generator_model = generator_model
        self.embedding_model = embedding_model
        self.tagging_model = tagging_model
        self.dedup_threshold = dedup_threshold

    # -- generation --

    def generate_baseline(self, section: str) -> list[ChecklistQuestion]:
        """Zero-shot questions for a section, no feedback in context."""
        response = self.provider.chat(
            ChatRequest(
                model_id=self.generator_model,
                system=self.prompts.get("baseline_system"),
                user=self.prompts.render("baseline_user", section=section),
            )
        )
        parsed = parsing.parse_questions(response.text)
        if not parsed:
            raise OutputParseError(
                f"no itemized questions in baseline response: {response.text[:200]!r}"
            )
        return [make_question(text, section, "baseline") for text, _ in parsed]

    def propose_from_feedback(
        self, batch: list[FeedbackItem], section: str
    ) -> list[ChecklistQuestion]:
        """Questions proposed from one feedback batch.

        The model lists 1-based indices of the feedback items each
        question addresses; these become covered_feedback_hint ids.
        Out-of-range indices are dropped with a warning.
        """
        if not batch:
            raise DataError("feedback batch is empty")
        mismatched = [item.id for item in batch if item.section != section]
        if mismatched:
            raise DataError(f"batch items not tagged {section!r}: {mismatched[:5]}")
        itemized = "\n".join(f"{i}. {item.text}" for i, item in enumerate(batch, start=1))
        response = self.provider.chat(
            ChatRequest(
                model_id=self.generator_model,
                system=self.prompts.render("proposer_system", section=section),
                user=self.prompts.render("proposer_user", feedback_items=itemized),
                max_tokens=4096,
            )
        )
        parsed = parsing.parse_questions(response.text)
        if not parsed:
            raise OutputParseError(
                f"no itemized questions in proposer response: {response.text[:200]!r}"
            )
        questions = []
        for text, indices in parsed:
            hint = []
            for index in indices or []:
                if 1 <= index <= len(batch):
                    hint.append(batch[index - 1].id)
                else:
                    logger.warning(
                        "proposer cited feedback index %d outside batch of %d for %r; dropped",
                        index, len(batch), text[:60],
                    )
            questions.append(
                make_question(text, section, "feedback", covered_feedback_hint=tuple(hint))
            )
        return questions

    # -- polarity --

    def _classify_polarity_good(self, text: str) -> bool | None:
        response = self.provider.chat(
            ChatRequest(
                model_id=self.generator_model,
                system=self.prompts.get("polarity_check_system"),
                user=self.prompts.render("polarity_check_user", question=text),
            )
        )
        answer = parsing.parse_yes_no(response.text)
        if answer is None:
            return None
        return answer == "yes"

    def normalize_direction(self, question: ChecklistQuestion) -> ChecklistQuestion | None:
        """Ensure a "Yes" answer denotes a good note, rewriting if not.

        Returns None (and logs) when two rewrite attempts still classify
        as wrong-polarity or unparseable.
        """
        verdict = self._classify_polarity_good(question.text)
        if verdict is True:
            return question
        if verdict is None:
            logger.warning("polarity check unparseable for %s; dropped", question.id)
            return None
        current = question.text
        for attempt in (1, 2):
            user = self.prompts.render("polarity_rewrite_user", question=current)
            if attempt == 2:
                user += "\n(The previous rewrite still had a reversed polarity; try again.)"
            response = self.provider.chat(
                ChatRequest(
                    model_id=self.generator_model,
                    system=self.prompts.get("polarity_rewrite_system"),
                    user=user,
                )
            )
            rewritten = parsing.first_question_line(response.text)
            if rewritten and self._classify_polarity_good(rewritten) is True:
                return replace(
                    question,
                    id=question_id(rewritten, question.section),
                    text=rewritten,
                )
        logger.warning(
            "question %s still wrong-polarity after rewrite retry; dropped", question.id
        )
        return None

    # -- dedup --

    def embed_questions(self, questions: list[ChecklistQuestion]) -> list[EmbeddingVector]:
        return self.provider.embed([q.text for q in questions], self.embedding_model)

    def merge_cluster(self, cluster: list[ChecklistQuestion]) -> ChecklistQuestion:
        """Consolidate near-duplicates into one merged question.

        Member texts go to the model sorted by id so the exchange is
        deterministic; provenance and feedback hints are unioned.
        """
        if len(cluster) < 2:
            raise DataError("merge_cluster requires at least two questions")
        members = sorted(cluster, key=lambda q: q.id)
        listing = "\n".join(f"- {q.text}" for q in members)
        response = self.provider.chat(
            ChatRequest(
                model_id=self.generator_model,
                system=self.prompts.get("merge_system"),
                user=self.prompts.render("merge_user", questions=listing),
            )
        )
        merged_text = parsing.first_question_line(response.text)
        if not merged_text:
            raise OutputParseError(
                f"merge response has no question line: {response.text[:200]!r}"
            )
        section = members[0].section
        source_ids: list[str] = []
        hints: set[str] = set()
        for member in members:
            source_ids.extend(member.cluster_members if member.cluster_members else (member.id,))
            hints.update(member.covered_feedback_hint)
        merged = make_question(
            merged_text,
            section,
            "merged",
            cluster_members=tuple(sorted(set(source_ids))),
            covered_feedback_hint=tuple(sorted(hints)),
        )
        normalized = self.normalize_direction(merged)
        if normalized is None:
            raise OutputParseError(f"merged question failed polarity normalization: {merged_text!r}")
        return normalized

    def dedup(
        self, questions: list[ChecklistQuestion], max_passes: int = 2
    ) -> tuple[list[ChecklistQuestion], int]:
        """Cluster-and-merge until no near-duplicates remain, or the pass
        budget runs out (merged questions can themselves be near-dups,
        so one re-pass is performed)."""
        current = sorted(questions, key=lambda q: q.id)
        passes = 0
        for _ in range(max_passes):
            if len(current) < 2:
                break
            passes += 1
            vectors = self.embed_questions(current)
            graph = build_similarity_graph(current, vectors, self.dedup_threshold)
            components = clusters(graph)
            if all(len(c) == 1 for c in components):
                break
            by_id = {q.id: q for q in current}
            merged: list[ChecklistQuestion] = []
            for component in components:
                if len(component) == 1:
                    merged.append(by_id[component[0]])
                else:
                    merged.append(self.merge_cluster([by_id[qid] for qid in component]))
            current = sorted(merged, key=lambda q: q.id)
        return current, passes

    # -- tagging --

    def tag_questions(
        self, questions: list[ChecklistQuestion]
    ) -> tuple[list[ChecklistQuestion], list[tuple[ChecklistQuestion, str]]]:
        """Tag each question and keep only applicable + section-specific ones."""
        kept: list[ChecklistQuestion] = []
        dropped: list[tuple[ChecklistQuestion, str]] = []
        for question in sorted(questions, key=lambda q: q.id):
            flags = self._tag_once(question, strict=False)
            if flags is None:
                flags = self._tag_once(question, strict=True)
            if flags is None:
                logger.warning("tagging reply unparseable for %s; dropped", question.id)
                dropped.append((question, "untaggable"))
                continue
            applicable, section_specific = flags
            tagged = replace(
                question, tags=QuestionTags(applicable, section_specific)
            )
            if applicable and section_specific:
                kept.append(tagged)
            else:
                reason = "not_applicable" if not applicable else "not_section_specific"
                logger.info("question %s dropped: %s", question.id, reason)
                dropped.append((tagged, reason))
        return kept, dropped

    def _tag_once(self, question: ChecklistQuestion, strict: bool) -> tuple[bool, bool] | None:
        user = self.prompts.render("tagging_user", question=question.text)
        if strict:
            user += (
                "\n\nYour previous reply could not be parsed. End with exactly two lines:"
                "\nAPPLICABLE: Yes or No\nSECTION_SPECIFIC: Yes or No"
            )
        response = self.provider.chat(
            ChatRequest(
                model_id=self.tagging_model,
                system=self.prompts.render("tagging_system", section=question.section),
                user=user,
            )
        )
        return parsing.parse_tag_flags(response.text)

    # -- full refinement --

    def refine(self, candidates: list[ChecklistQuestion]) -> RefineResult:
        """Polarity-normalize, dedup (with one re-pass), and tag.

        Exact duplicates (same content id, e.g. the same question
        proposed from two batches) collapse first, unioning their
        feedback hints; no model call is needed for those.
        """
        collapsed = collapse_exact_duplicates(candidates)
        normalized: list[ChecklistQuestion] = []
        dropped: list[tuple[ChecklistQuestion, str]] = []
        for question in sorted(collapsed, key=lambda q: q.id):
            result = self.normalize_direction(question)
            if result is None:
                dropped.append((question, "polarity"))
            else:
                normalized.append(result)
        normalized = collapse_exact_duplicates(normalized)
        deduped, passes = self.dedup(normalized)
        kept, tag_dropped = self.tag_questions(deduped)
        dropped.extend(tag_dropped)
        return RefineResult(kept=kept, dropped=dropped, dedup_passes=passes)


def collapse_exact_duplicates(
    questions: list[ChecklistQuestion],
) -> list[ChecklistQuestion]:
    """Collapse questions sharing a content id, unioning feedback hints."""
    by_id: dict[str, ChecklistQuestion] = {}
    for question in questions:
        existing = by_id.get(question.id)
        if existing is None:
            by_id[question.id] = question
        else:
            hints = tuple(sorted(set(existing.covered_feedback_hint) | set(question.covered_feedback_hint)))
            by_id[question.id] = replace(existing, covered_feedback_hint=hints)
            logger.info("collapsed exact duplicate question %s", question.id)
    return [by_id[qid] for qid in sorted(by_id)]
