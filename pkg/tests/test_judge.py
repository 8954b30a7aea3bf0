from __future__ import annotations

import pytest

from conftest import make_provider
from notecheck.corpus import EMPTY, Encounter, SectionedNote
from notecheck.distill import make_question
from notecheck.errors import DataError
from notecheck.judge import Judge, checklist_id, note_score_from_verdicts
from notecheck.prompts import PromptLibrary

PROMPTS = PromptLibrary()


def judge_with(rules=(), default="Yes"):
    provider, chat, _ = make_provider(rules=rules, default=default)
    return Judge(provider, PROMPTS), chat, provider


def q(text, section="assessment_and_plan"):
    return make_question(text, section, "feedback")


def encounter(i=1, ap="Plan is stable. Follow up in two weeks."):
    return Encounter(
        id=f"e{i:02d}",
        transcript=f"Doctor: visit {i}. Patient: fine.",
        note=SectionedNote(
            {
                "subjective": f"Feels fine at visit {i}.",
                "objective_exam": f"Exam normal at visit {i}.",
                "objective_results": EMPTY,
                "assessment_and_plan": ap,
            }
        ),
    )


class TestAnswer:
    def test_scripted_yes(self):
        j, _, _ = judge_with(rules=[("Q1 satisfied", "Yes")], default="No")
        verdict = j.answer(q("Is Q1 satisfied?"), "transcript", "plan text")
        assert verdict.answer == "yes"

    def test_unparseable_twice_is_error_verdict(self):
        j, chat, _ = judge_with(default="Maybe")
        verdict = j.answer(q("Is the plan fine?"), "transcript", "plan text")
        assert verdict.answer == "error"
        assert chat.calls == 2  # one retry with the stricter instruction

    def test_retry_with_strict_instruction_recovers(self):
        j, _, _ = judge_with(
            rules=[("could not be parsed", "No")],
            default="It depends on several things.",
        )
        verdict = j.answer(q("Is the plan fine?"), "transcript", "plan text")
        assert verdict.answer == "no"

    def test_empty_section_judged_as_is(self):
        def property_mock(request):
            return "No" if "EMPTY" in request.user else "Yes"

        j, _, _ = judge_with(default=property_mock)
        verdict = j.answer(q("Is the plan complete?"), "transcript", EMPTY)
        assert verdict.answer == "no"

    def test_rationale_after_token_still_parses(self):
        j, _, _ = judge_with(default="Yes. The plan covers the discussion.")
        assert j.answer(q("Is it fine?"), "t", "s").answer == "yes"


class TestScoreNote:
    def _checklist(self, n=25):
        return [q(f"Is quality point {i} satisfied?") for i in range(n)]

    def test_all_yes_scores_one(self):
        j, _, _ = judge_with(default="Yes")
        score = j.score_note(self._checklist(25), "t", "s")
        assert score.score == 1.0 and score.passed == 25 and score.total == 25

    def test_five_of_twenty_five(self):
        checklist = self._checklist(25)
        passing = {f"Is quality point {i} satisfied?" for i in range(5)}

        def scripted(request):
            return "Yes" if any(text in request.user for text in passing) else "No"

        j, _, _ = judge_with(default=scripted)
        score = j.score_note(checklist, "t", "s")
        assert score.passed == 5 and score.score == 0.2

    def test_zero_yes_scores_zero(self):
        j, _, _ = judge_with(default="No")
        assert j.score_note(self._checklist(25), "t", "s").score == 0.0

    def test_error_verdict_marks_partial_with_ids(self):
        checklist = self._checklist(3)
        bad = checklist[1]

        def scripted(request):
            return "Maybe" if bad.text in request.user else "Yes"

        j, _, _ = judge_with(default=scripted)
        score = j.score_note(checklist, "t", "s")
        assert score.partial
        assert score.error_question_ids == (bad.id,)
        assert score.passed == 2

    def test_empty_checklist_rejected(self):
        j, _, _ = judge_with()
        with pytest.raises(DataError, match="empty"):
            j.score_note([], "t", "s")

    def test_permutation_invariance(self):
        checklist = self._checklist(6)

        def scripted(request):
            return "Yes" if "point 2" in request.user or "point 4" in request.user else "No"

        j, _, _ = judge_with(default=scripted)
        forward = j.score_note(checklist, "t", "s")
        backward = j.score_note(list(reversed(checklist)), "t", "s")
        assert forward.passed == backward.passed == 2
        assert forward.score == backward.score

    def test_adding_passing_question_never_lowers_passed(self):
        checklist = self._checklist(4)

        def scripted(request):
            return "Yes" if "point 0" in request.user or "extra" in request.user else "No"

        j, _, _ = judge_with(default=scripted)
        base = j.score_note(checklist, "t", "s")
        extended = j.score_note(checklist + [q("Is the extra point satisfied?")], "t", "s")
        assert extended.passed >= base.passed
        assert 0.0 <= extended.score <= 1.0


class TestScoreCorpus:
    def test_constant_yes_over_three_encounters(self):
        j, _, _ = judge_with(default="Yes")
        scores = j.score_corpus([q("Is it fine?")], [encounter(3), encounter(1), encounter(2)],
                                "assessment_and_plan")
        assert [s.note_ref for s in scores] == ["e01", "e02", "e03"]
        assert all(s.score == 1.0 for s in scores)

    def test_second_pass_hits_cache_only(self):
        j, chat, provider = judge_with(default="Yes")
        encounters = [encounter(i) for i in range(1, 4)]
        checklist = [q("Is it fine?"), q("Is it complete?")]
        j.score_corpus(checklist, encounters, "assessment_and_plan")
        calls_before = chat.calls
        j.score_corpus(checklist, encounters, "assessment_and_plan")
        assert chat.calls == calls_before

    def test_empty_encounters_rejected(self):
        j, _, _ = judge_with()
        with pytest.raises(DataError, match="no encounters"):
            j.score_corpus([q("Is it fine?")], [], "assessment_and_plan")


class TestPassTable:
    def test_shape_and_values(self):
        checklist = [q("Is it fine?"), q("Is it complete?")]

        def scripted(request):
            return "Yes" if "Is it fine?" in request.user else "No"

        j, _, _ = judge_with(default=scripted)
        table = j.pass_table(checklist, [("n1", "t", "s"), ("n2", "t", "s2")])
        fine = next(x.id for x in checklist if x.text == "Is it fine?")
        complete = next(x.id for x in checklist if x.text == "Is it complete?")
        assert table[fine] == {"n1": True, "n2": True}
        assert table[complete] == {"n1": False, "n2": False}

    def test_error_verdict_raises(self):
        j, _, _ = judge_with(default="Maybe")
        with pytest.raises(DataError, match="error verdict"):
            j.pass_table([q("Is it fine?")], [("n1", "t", "s")])


def test_checklist_id_is_order_independent():
    a, b = q("Is it fine?"), q("Is it complete?")
    assert checklist_id([a, b]) == checklist_id([b, a])


def test_note_score_from_verdicts_counts_errors_as_failures():
    checklist = [q("Is it fine?"), q("Is it complete?")]
    from notecheck.judge import Verdict

    verdicts = [
        Verdict(checklist[0].id, "n", "yes", "Yes"),
        Verdict(checklist[1].id, "n", "error", "??"),
    ]
    score = note_score_from_verdicts(checklist, verdicts, "n")
    assert score.passed == 1 and score.partial
