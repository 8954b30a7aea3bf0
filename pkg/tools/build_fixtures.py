#!/usr/bin/env python3
"""Regenerate the bundled synthetic fixtures under src/notecheck/fixtures/.

Deterministic by construction (no wall clock, fixed seeds). The fixture
design pins down the offline end-to-end behavior:

  * 30 distinct candidate questions arise from the feedback corpus, one
    per feedback keyword; 12 of them form 6 near-duplicate pairs whose
    embeddings the mock script pins above the dedup threshold.
  * one candidate (free of speculative language) is scripted as not
    LLM-enforceable: the mock judge keeps answering "Yes" on its
    rewritten notes, so its unit-test rate is 0.0 and it is discarded.
  * five questions are coverage-dominated by broader ones, so the
    optimal selection is a strict subset (18 questions) and random
    equal-size subsets score strictly worse.

Run from the repo root:  python3 tools/build_fixtures.py
"""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from notecheck.corpus import EMPTY, NOTE_SECTIONS  # noqa: E402
from notecheck.perturb import render_sentences, segment_sentences  # noqa: E402
from notecheck.provider import EmbeddingVector, MockEmbeddingBackend, cosine_similarity  # noqa: E402

FIXTURES = ROOT / "src" / "notecheck" / "fixtures"
DIM = 64
PAIR_COS = 0.92

# (key, keyword, question, group, sensitivity_class, threshold, enforceable, praise)
CANDIDATES = [
    ("v1a", "bullet points", "Is the assessment and plan organized with bullet points where appropriate?", "g1", "organization", 0, True, False),
    ("v1b", "easy to read", "Is the assessment and plan formatted so that it is easy to read?", "g1", "organization", 0, True, True),
    ("v2a", "separates each problem", "Does the assessment and plan clearly separate each medical problem?", "g2", "organization", 0, True, False),
    ("v2b", "problem as its own item", "Does the assessment and plan address each problem as its own item?", "g2", "organization", 0, True, False),
    ("v3a", "medication doses", "Are medication doses documented in the assessment and plan?", "g3", "completeness", 0, True, False),
    ("v3b", "medication frequency", "Is medication frequency documented in the assessment and plan?", "g3", "completeness", 0, True, False),
    ("v4a", "follow-up timeline", "Does the assessment and plan state a follow-up timeline?", "g4", "completeness", 1, True, False),
    ("v4b", "when to return", "Does the assessment and plan state when the patient should return?", "g4", "completeness", 1, True, False),
    ("v5a", "main diagnosis", "Does the assessment and plan state the main diagnosis?", "g5", "completeness", 0, True, True),
    ("v5b", "working diagnosis", "Does the assessment and plan give a working diagnosis for the visit?", "g5", "completeness", 0, True, False),
    ("v6a", "discussed with the patient", "Does the assessment and plan reflect what was discussed with the patient?", "g6", "completeness", 2, True, True),
    ("v6b", "agreed with the patient", "Does the assessment and plan reflect decisions agreed with the patient?", "g6", "completeness", 2, True, False),
    ("s01", "covers every issue", "Does the assessment and plan cover every issue raised during the visit?", None, "completeness", 0, True, False),
    ("s02", "key clinical details", "Does the assessment and plan capture the key clinical details of the visit?", None, "completeness", 0, True, True),
    ("s03", "tests that were ordered", "Does the assessment and plan list the tests that were ordered?", None, "completeness", 0, True, False),
    ("s04", "referrals", "Are referrals documented in the assessment and plan?", None, "completeness", 1, True, False),
    ("s05", "patient education", "Is patient education documented in the assessment and plan?", None, "completeness", 1, True, True),
    ("s06", "rationale for each treatment", "Is the rationale for each treatment documented in the assessment and plan?", None, "completeness", 1, True, False),
    ("s07", "current clinical status", "Does the assessment and plan state the patient's current clinical status?", None, "completeness", 2, True, True),
    ("s08", "goals of treatment", "Are the goals of treatment stated in the assessment and plan?", None, "completeness", 2, True, False),
    ("s09", "logical order", "Is the assessment and plan written in a logical order?", None, "organization", 0, True, False),
    ("s10", "consistent structure", "Does the assessment and plan follow a consistent structure?", None, "organization", 0, True, False),
    ("s11", "repeated statements", "Is the assessment and plan free of repeated statements?", None, "redundancy", 0, True, False),
    ("s12", "redundant wording", "Is the assessment and plan concise without redundant wording?", None, "redundancy", 0, True, False),
    ("s13", "speculative language", "Is the assessment and plan free of speculative language?", None, "style", 0, False, False),
    ("s14", "medical terminology", "Is medical terminology used correctly in the assessment and plan?", None, "style", 0, True, False),
    ("s15", "third person", "Is the assessment and plan written in the third person?", None, "style", 0, True, True),
    ("s16", "correct pronouns", "Does the assessment and plan use the correct pronouns for the patient?", None, "accuracy", 0, True, False),
    ("s17", "supported by the transcript", "Is every statement in the assessment and plan supported by the transcript?", None, "accuracy", 0, True, True),
    ("s18", "unrelated content", "Is the assessment and plan free of content unrelated to the visit?", None, "accuracy", 0, True, False),
]

# s11 is proposed with reversed polarity and rewritten during refinement.
WRONG_POLARITY = {
    "s11": "Does the assessment and plan repeat the same statements?",
}

# Merged consolidations; covers beyond the pair keywords create the
# coverage-dominated questions (s04, s09, s10; s11 and s18 are dominated
# by s12 and s17 below).
MERGED = {
    "g1": ("Is the assessment and plan organized and formatted so that it is easy to read?",
           ["bullet points", "easy to read", "logical order", "consistent structure"],
           ("organization", 0)),
    "g2": ("Does the assessment and plan keep each medical problem clearly separated?",
           ["separates each problem", "problem as its own item"],
           ("organization", 0)),
    "g3": ("Are medication names, doses, and frequencies documented in the assessment and plan?",
           ["medication doses", "medication frequency"],
           ("completeness", 0)),
    "g4": ("Does the assessment and plan state follow-up actions and timing for the patient?",
           ["follow-up timeline", "when to return", "referrals"],
           ("completeness", 1)),
    "g5": ("Does the assessment and plan state the main or working diagnosis?",
           ["main diagnosis", "working diagnosis"],
           ("completeness", 0)),
    "g6": ("Does the assessment and plan reflect what was discussed and agreed with the patient?",
           ["discussed with the patient", "agreed with the patient"],
           ("completeness", 2)),
}

EXTRA_COVERS = {
    "s12": ["redundant wording", "repeated statements"],
    "s17": ["supported by the transcript", "unrelated content"],
}

BASELINE = [
    ("b01", "Does the section include a clear and concise diagnosis or differential diagnosis for each problem?", ["main diagnosis", "working diagnosis"], ("completeness", 1)),
    ("b02", "Are the rationale and evidence for each diagnosis clearly documented?", ["rationale for each treatment"], ("completeness", 2)),
    ("b03", "Does the section provide a detailed plan for addressing each identified problem, including specific treatments and interventions?", ["separates each problem", "problem as its own item"], ("completeness", 1)),
    ("b04", "Are follow-up plans and timelines specified for each problem?", ["follow-up timeline", "when to return"], ("completeness", 2)),
    ("b05", "Does the section mention any need for additional diagnostic testing or referrals?", ["tests that were ordered", "referrals"], ("completeness", 2)),
    ("b06", "Is patient education or counseling regarding the diagnosis and treatment plan documented?", ["patient education"], ("completeness", 2)),
    ("b07", "Is there documentation of the patient's or caregiver's understanding and agreement with the plan?", ["agreed with the patient"], ("style", 0)),
    ("b08", "Does the section include considerations for any comorbid conditions that may affect the management of the patient's problems?", [], ("style", 0)),
    ("b09", "Is there documentation of any medication changes, with reasons provided for each change?", ["medication doses"], ("completeness", 1)),
    ("b10", "Are potential risks and benefits of the treatment plans discussed?", ["rationale for each treatment"], ("style", 0)),
]

FEEDBACK_REFERENCE_CHECKLIST = [
    "Is the assessment and plan section organized in a clear and concise manner, such as using bullet points instead of paragraphs where appropriate?",
    "Is the assessment and plan section comprehensive, covering all relevant patient issues discussed during the visit?",
    "Are documented medical inferences or conclusions properly placed in the assessment and plan sections instead of within the HPI?",
    "Does the assessment and plan section include a prioritized list of problems or diagnoses relevant to the visit?",
    "Does the assessment and plan section include the main diagnosis and relevant additional diagnoses?",
    "Is there sufficient detail in the assessment and plan to reflect patient-specific nuances discussed during the visit?",
    "Does the assessment and plan section include only relevant clinical reasoning and plan details, without repeating history of present illness (HPI) information or subjective patient statements?",
    "Is there an accurate and specific patient management plan for each condition mentioned in the assessment and plan?",
    "Is the assessment and plan based on information that is discussed or agreed upon with the patient?",
    "Are all relevant diagnostic and management details, such as medication names, doses, and follow-up plans, accurately captured in the assessment and plan?",
    "Does the assessment and plan include a summary of the patient's current clinical status, such as stable or unstable?",
    "Are duplicate or redundant statements avoided in the assessment and plan?",
    "Does the assessment and plan use third-person pronouns to ensure clarity of who will perform the actions?",
    "Are recommendations and patient education documented clearly and specifically in the assessment and plan?",
    "Is the assessment and plan section free from incorrectly attributing patient statements to physician recommendations or vice versa?",
    "Is the assessment and plan section organized and clearly structured to facilitate future review of the patient's management plan?",
    "Does the assessment and plan section include follow-up actions or recommendations discussed during the patient encounter?",
    "Is the assessment and plan free of extraneous information, ensuring that only details relevant to the current diagnosis and treatment plan are included?",
    "Are diagnoses in the assessment and plan section consistent with the clinical discussion and relevant to the specialty?",
    "Is there a clear distinction between the patient's reported symptoms and the physician's assessments or recommendations?",
    "Are the goals of treatment and expected outcomes clearly stated in the assessment and plan?",
    "Is the assessment and plan section clear, concise, and free of redundancy?",
    "Does the assessment and plan document treatment options and decisions discussed during the visit?",
    "Is all relevant medication information, including names, dosages, and frequency, accurately documented in the assessment and plan?",
    "Is medical terminology correctly and consistently used in the assessment and plan section?",
]

COMPLAINT_TEMPLATES = [
    "The note needs work on {kw} in the plan.",
    "Plan is missing {kw} this time.",
    "Please improve {kw} for the assessment and plan.",
    "I keep having to fix {kw} myself.",
    "Draft did not handle {kw} well today.",
    "Issues again with {kw} in the A&P.",
    "The {kw} part was wrong for this visit.",
]
PRAISE_TEMPLATES = [
    "Great job with {kw} in the plan.",
    "The {kw} was handled well here.",
    "Nice work on {kw} this visit.",
    "I liked the {kw} in this note.",
    "The plan got {kw} exactly right.",
    "Solid on {kw} as usual.",
    "Very happy with {kw} today.",
]
COMPLAINT_RATINGS = [1, 2, 1, 3, 1, 1, 2]
PRAISE_RATINGS = [5, 4, 5, 5, 3, 5, 4]

OTHER_SECTION_FEEDBACK = [
    ("subjective", "History reads like a transcript dump, please summarize.", 2),
    ("subjective", "Chief complaint was captured nicely this time.", 5),
    ("subjective", "Too much small talk ended up in the history.", 2),
    ("subjective", "Social history placement finally looks right.", 4),
    ("objective_exam", "Exam findings were padded with things we never checked.", 1),
    ("objective_exam", "Physical exam section was crisp and accurate.", 5),
    ("objective_exam", "Vitals narrative is cluttered and hard to scan.", 2),
    ("objective_exam", "Exam documentation matched what I dictated.", 4),
    ("objective_results", "Lab values were transcribed with the wrong units.", 1),
    ("objective_results", "Imaging summary was exactly what I needed.", 5),
    ("objective_results", "Old results keep showing up as if new.", 2),
    ("objective_results", "Results section ordering works well for me.", 4),
    ("full", "Overall tone of the whole note is too casual.", 2),
    ("full", "Whole note was ready to sign with no edits.", 5),
    ("full", "Note length overall is creeping up again.", 3),
    ("full", "Formatting across the whole note is consistent now.", 4),
]

CONDITIONS = [
    "hypertension", "type 2 diabetes", "hyperlipidemia", "asthma", "migraine",
    "osteoarthritis of the knee", "gastroesophageal reflux", "seasonal allergies",
    "chronic low back pain", "anxiety", "hypothyroidism", "atrial fibrillation",
    "chronic sinusitis", "plantar fasciitis", "insomnia", "eczema",
    "iron deficiency anemia", "gout", "rotator cuff tendinopathy", "prediabetes",
]
MEDICATIONS = [
    "lisinopril", "metformin", "atorvastatin", "albuterol", "sumatriptan",
    "naproxen", "omeprazole", "loratadine", "cyclobenzaprine", "sertraline",
    "levothyroxine", "apixaban", "fluticasone", "ibuprofen", "melatonin",
    "triamcinolone", "ferrous sulfate", "allopurinol", "meloxicam", "semaglutide",
]


def write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            handle.write("\n")


def build_feedback():
    records = []
    anchors = {}
    counter = 1
    for position, (key, keyword, _q, _g, _cls, _t, _enf, praise) in enumerate(CANDIDATES):
        templates = PRAISE_TEMPLATES if praise else COMPLAINT_TEMPLATES
        ratings = PRAISE_RATINGS if praise else COMPLAINT_RATINGS
        count = 7 if position < 24 else 6
        for i in range(count):
            text = templates[i].format(kw=keyword)
            record = {
                "id": f"fb-{counter:04d}",
                "text": text,
                "rating": ratings[i],
                "section": "assessment_and_plan",
            }
            if i == 0:
                anchors[key] = text
            records.append(record)
            counter += 1
    for section, text, rating in OTHER_SECTION_FEEDBACK:
        records.append(
            {"id": f"fb-{counter:04d}", "text": text, "rating": rating, "section": section}
        )
        counter += 1
    return records, anchors


def build_encounters():
    encounters = []
    for i in range(1, 21):
        condition = CONDITIONS[i - 1]
        medication = MEDICATIONS[i - 1]
        dose = 5 * i
        weeks = 2 + (i % 5)
        transcript = "\n".join(
            [
                f"Doctor: How has the {condition} been since your last visit?",
                f"Patient: Some days are better, but I still notice it after about {i} hours of activity.",
                f"Doctor: Are you taking the {medication} every day as we discussed?",
                "Patient: Mostly, though I missed a few doses last month.",
                f"Doctor: Let's keep the current dose and check back in {weeks} weeks.",
            ]
        )
        subjective = " ".join(
            [
                f"The patient returns for follow-up of {condition}.",
                f"Symptoms now flare roughly {i} times per month.",
                f"The patient denies systemic symptoms alongside the {condition}.",
            ]
        )
        exam = " ".join(
            [
                f"Blood pressure today is {110 + i}/{70 + (i % 8)} with a regular pulse.",
                f"The focused examination is otherwise unremarkable for {condition}.",
            ]
        )
        if i in (3, 11):
            results = ""
        else:
            results = " ".join(
                [
                    f"Basic metabolic panel from week {i} is within normal limits.",
                    f"Prior imaging for {condition} shows no interval change.",
                ]
            )
        ap_cores = [
            f"{condition.capitalize()} is the working diagnosis for visit {i}.",
            f"Continue {medication} {dose} mg daily with food.",
            f"Order a follow-up laboratory panel in {weeks} weeks for the {condition}.",
            f"Counsel the patient on adherence and lifestyle measures for {condition}.",
            f"Return to clinic in {weeks + 2} weeks or sooner if the {condition} worsens.",
        ]
        if i % 4 == 0:
            ap_cores.append(f"Refer to physical therapy for {condition} if no improvement.")
        if i % 2 == 0:
            ap_cores = ["- " + core for core in ap_cores]
        note = {
            "subjective": subjective,
            "objective_exam": exam,
            "objective_results": results,
            "assessment_and_plan": render_sentences(ap_cores),
        }
        encounters.append(
            {"id": f"enc-{i:02d}", "transcript": transcript, "note": note}
        )
    return encounters


def build_preference_pairs(encounters):
    pairs = []
    for i, enc in enumerate(encounters, start=1):
        ap = enc["note"]["assessment_and_plan"]
        cores = segment_sentences(ap)
        removed = 1 if i % 3 else 2
        degraded = render_sentences(cores[: len(cores) - removed])
        if i % 4 == 3:
            note_a, note_b, preferred = degraded, ap, "b"
        else:
            note_a, note_b, preferred = ap, degraded, "a"
        pairs.append(
            {
                "id": f"pair-{i:02d}",
                "transcript": enc["transcript"],
                "note_a": note_a,
                "note_b": note_b,
                "section": "assessment_and_plan",
                "preferred": preferred,
            }
        )
    return pairs


def build_external_perturbations(encounters):
    kinds = [
        "prm_inaccuracy", "prm_hallucination", "prm_unhelpful",
        "prm_incomplete_step", "prm_paraphrase",
    ]
    records = []
    for i, enc in enumerate(encounters[:10]):
        kind = kinds[i % 5]
        cores = segment_sentences(enc["note"]["assessment_and_plan"])
        if kind == "prm_incomplete_step":
            text = render_sentences(cores[:1] + cores[2:])
        elif kind == "prm_hallucination":
            text = render_sentences(cores + ["Start warfarin for the newly found rhythm problem."])
        elif kind == "prm_inaccuracy":
            text = render_sentences([cores[0]] + [c.replace("daily", "hourly") for c in cores[1:]])
        elif kind == "prm_unhelpful":
            text = render_sentences(cores + ["Further plans to be determined as appropriate."])
        else:  # prm_paraphrase keeps content, reorders two steps
            text = render_sentences([cores[1], cores[0]] + cores[2:])
        records.append({"source_id": enc["id"], "kind": kind, "text": text})
    return records


def build_mock_script(anchors):
    questions = []
    overrides = {}
    group_index = {g: i for i, g in enumerate(sorted(MERGED))}
    sin_theta = math.sqrt(1.0 - PAIR_COS * PAIR_COS)
    seen_groups = set()
    for key, keyword, text, group, cls, threshold, enforceable, _praise in CANDIDATES:
        covers = EXTRA_COVERS.get(key, [keyword])
        questions.append(
            {
                "key": key,
                "text": text,
                "proposer_text": WRONG_POLARITY.get(key, text),
                "keyword": keyword,
                "covers": covers,
                "anchor_text": anchors[key],
                "group": group,
                "sensitivity": {"class": cls, "threshold": threshold},
                "enforceable": enforceable,
                "role": "candidate",
            }
        )
        if group is not None:
            gi = group_index[group]
            if group not in seen_groups:
                overrides[text] = {str(2 * gi): 1.0}
                seen_groups.add(group)
            else:
                overrides[text] = {str(2 * gi): PAIR_COS, str(2 * gi + 1): sin_theta}
    for group, (text, covers, (cls, threshold)) in sorted(MERGED.items()):
        questions.append(
            {
                "key": f"m-{group}",
                "text": text,
                "keyword": None,
                "covers": covers,
                "anchor_text": None,
                "group": group,
                "sensitivity": {"class": cls, "threshold": threshold},
                "enforceable": True,
                "role": "merged",
            }
        )
        overrides[text] = {str(20 + group_index[group]): 1.0}
    for key, text, covers, (cls, threshold) in BASELINE:
        questions.append(
            {
                "key": key,
                "text": text,
                "keyword": None,
                "covers": covers,
                "anchor_text": None,
                "group": None,
                "sensitivity": {"class": cls, "threshold": threshold},
                "enforceable": True,
                "role": "baseline",
            }
        )
    polarity_rewrites = {
        WRONG_POLARITY[key]: text
        for key, _kw, text, *_rest in CANDIDATES
        if key in WRONG_POLARITY
    }
    return {
        "dim": DIM,
        "questions": questions,
        "merged": {g: MERGED[g][0] for g in MERGED},
        "polarity_rewrites": polarity_rewrites,
        "embedding_overrides": overrides,
    }


def build_reference_checklists():
    records = []
    for index, (_key, text, _covers, _sens) in enumerate(BASELINE, start=1):
        records.append(
            {"checklist": "baseline", "index": index, "text": text,
             "section": "assessment_and_plan"}
        )
    for index, text in enumerate(FEEDBACK_REFERENCE_CHECKLIST, start=1):
        records.append(
            {"checklist": "feedback", "index": index, "text": text,
             "section": "assessment_and_plan"}
        )
    return records


def verify(feedback, encounters, script):
    keywords = [c[1] for c in CANDIDATES]
    for a in keywords:
        for b in keywords:
            if a != b:
                assert a not in b, f"keyword {a!r} is a substring of {b!r}"
    texts = [r["text"] for r in feedback]
    assert len(set(texts)) == len(texts), "feedback texts not unique"
    for record in feedback:
        hits = [kw for kw in keywords if kw in record["text"]]
        if record["section"] == "assessment_and_plan":
            assert len(hits) == 1, f"{record['id']} matches {hits}"
        else:
            assert not hits, f"{record['id']} carries a checklist keyword"
        assert len(record["text"].split()) > 2

    all_cores = []
    for enc in encounters:
        assert "\n\n" not in enc["transcript"]
        ap = enc["note"]["assessment_and_plan"]
        assert ap and ap != EMPTY
        for section in NOTE_SECTIONS:
            text = enc["note"][section]
            if not text:
                continue
            assert "\n\n" not in text
            cores = segment_sentences(text)
            assert render_sentences(cores) == text or section != "assessment_and_plan"
            assert segment_sentences(render_sentences(cores)) == cores
            all_cores.extend(cores)
        assert len(segment_sentences(ap)) >= 4
    assert len(set(all_cores)) == len(all_cores), "encounter sentences not unique"

    # embeddings: only the scripted pairs may cross the dedup threshold
    backend = MockEmbeddingBackend(
        dim=script["dim"], seed=0,
        overrides={
            text: _dense(script["dim"], sparse)
            for text, sparse in script["embedding_overrides"].items()
        },
    )
    entries = [q for q in script["questions"] if q["role"] in ("candidate", "merged")]
    vectors = backend.embed_texts([q["text"] for q in entries], "mock-embed")
    paired = 0
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            cos = cosine_similarity(
                EmbeddingVector(tuple(vectors[i]), "m"),
                EmbeddingVector(tuple(vectors[j]), "m"),
            )
            same_group = (
                entries[i]["group"] is not None
                and entries[i]["group"] == entries[j]["group"]
                and entries[i]["role"] == entries[j]["role"] == "candidate"
            )
            if same_group:
                assert cos >= 0.85, (entries[i]["key"], entries[j]["key"], cos)
                paired += 1
            else:
                assert cos < 0.85, (entries[i]["key"], entries[j]["key"], cos)
    assert paired == 6, f"expected 6 near-duplicate pairs, saw {paired}"


def _dense(dim, sparse):
    vector = [0.0] * dim
    for index, value in sparse.items():
        vector[int(index)] = float(value)
    return vector


def main():
    feedback, anchors = build_feedback()
    encounters = build_encounters()
    script = build_mock_script(anchors)
    verify(feedback, encounters, script)

    write_jsonl(FIXTURES / "feedback.jsonl", feedback)
    write_jsonl(FIXTURES / "encounters.jsonl", encounters)
    write_jsonl(FIXTURES / "preference_pairs.jsonl", build_preference_pairs(encounters))
    write_jsonl(FIXTURES / "external_perturbations.jsonl", build_external_perturbations(encounters))
    write_jsonl(FIXTURES / "reference_checklists.jsonl", build_reference_checklists())
    (FIXTURES / "mock_script.json").write_text(
        json.dumps(script, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    ap_count = sum(1 for r in feedback if r["section"] == "assessment_and_plan")
    print(f"feedback: {len(feedback)} records ({ap_count} assessment_and_plan)")
    print(f"encounters: {len(encounters)}")
    print("fixtures written to", FIXTURES)


if __name__ == "__main__":
    main()
