"""Acceptance criteria, one test per criterion.

Each test pins the tolerance stated for it and asserts its runtime
budget. Everything runs against the deterministic mock provider; no
network. A summary table (one line per criterion) prints at the end of
the pytest run via the conftest hook.
"""

from __future__ import annotations

import json
import math
import random
import subprocess
import sys
import time
from collections import Counter

import numpy as np
import pytest

from conftest import FIXTURES, make_provider
from notecheck.cli import PathsConfig, PipelineConfig, run_stage
from notecheck.corpus import EMPTY, NOTE_SECTIONS, load_encounters, section_text
from notecheck.distill import (
    SimilarityGraph,
    build_similarity_graph,
    clusters,
    make_question,
)
from notecheck.enforce import UnitTestCase, enforceability_rate
from notecheck.errors import DataError
from notecheck.evalstats import (
    LogisticConfig,
    cohens_d,
    fit_logistic,
    logistic_loss_grad,
    one_sample_ttest,
    paired_ttest,
    perturbation_delta,
    two_sample_ttest,
)
from notecheck.judge import Judge
from notecheck.mockscript import MockScript
from notecheck.perturb import (
    PerturbationSpec,
    apply,
    perturb_corpus,
    segment_sentences,
)
from notecheck.prompts import PromptLibrary
from notecheck.provider import (
    EmbeddingVector,
    MockEmbeddingBackend,
    cosine_similarity,
)
from notecheck.selection import (
    CoverageMatrix,
    SelectionConfig,
    beam_search_select,
    coverage_rate,
    diversity,
    jaccard,
    objective,
    objective_score,
)
from test_evalstats import FROZEN

PROMPTS = PromptLibrary()


class Budget:
    def __init__(self, seconds: float):
        self.seconds = seconds
        self.started = time.perf_counter()

    def check(self):
        elapsed = time.perf_counter() - self.started
        assert elapsed < self.seconds, f"runtime {elapsed:.2f}s exceeds {self.seconds}s budget"


def test_criterion_01_objective_arithmetic():
    budget = Budget(1.0)
    config = SelectionConfig(alpha=0.5, lam=0.0005)
    value = objective_score(0.988, 0.917, 25, config)
    assert abs(value - 0.94000) < 1e-12
    budget.check()


def _random_instance(rng: random.Random) -> CoverageMatrix:
    n = rng.randint(4, 12)
    m = rng.randint(5, 40)
    density = rng.uniform(0.08, 0.5)
    question_ids = tuple(f"q{i:02d}" for i in range(n))
    feedback_ids = tuple(f"f{j:02d}" for j in range(m))
    cells = tuple(
        tuple(rng.random() < density for _ in range(m)) for _ in range(n)
    )
    return CoverageMatrix(question_ids, feedback_ids, cells)


def _oracle_tables(matrix: CoverageMatrix):
    """Bitmasks and pairwise Jaccard, computed independently of the
    selection module."""
    ids = sorted(matrix.question_ids)
    index = {qid: matrix.question_ids.index(qid) for qid in ids}
    masks = {}
    for qid in ids:
        mask = 0
        for j, covered in enumerate(matrix.cells[index[qid]]):
            if covered:
                mask |= 1 << j
        masks[qid] = mask
    similarity = {}
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            qa, qb = ids[a], ids[b]
            union = bin(masks[qa] | masks[qb]).count("1")
            inter = bin(masks[qa] & masks[qb]).count("1")
            similarity[(qa, qb)] = 0.0 if union == 0 else inter / union
    return ids, masks, similarity


def _oracle_eval(subset, masks, similarity, m, alpha, lam):
    """Score a subset exactly as the exhaustive enumerator does: elements
    processed in sorted order, so floats match bit for bit."""
    ids = sorted(subset)
    mask = 0
    pair_sum = 0.0
    for i, qid in enumerate(ids):
        mask |= masks[qid]
        for prev in ids[:i]:
            key = (prev, qid) if prev < qid else (qid, prev)
            pair_sum += similarity[key]
    k = len(ids)
    cov = bin(mask).count("1") / m
    div = 1.0 if k <= 1 else 1.0 - (2.0 * pair_sum) / (k * (k - 1))
    return alpha * cov + (1 - alpha) * div - lam * k


def test_criterion_02_beam_search_matches_exhaustive_on_50_instances():
    budget = Budget(10.0)
    rng = random.Random(424242)
    alpha, lam = 0.5, 0.0005
    hits = 0
    for _ in range(50):
        matrix = _random_instance(rng)
        ids, masks, similarity = _oracle_tables(matrix)
        m = len(matrix.feedback_ids)

        best = [-math.inf]

        def dfs(position, chosen_mask, pair_sum, chosen):
            if chosen:
                k = len(chosen)
                cov = bin(chosen_mask).count("1") / m
                div = 1.0 if k <= 1 else 1.0 - (2.0 * pair_sum) / (k * (k - 1))
                score = alpha * cov + (1 - alpha) * div - lam * k
                if score > best[0]:
                    best[0] = score
            if position == len(ids):
                return
            qid = ids[position]
            # accumulate pair by pair so floats match _oracle_eval exactly
            grown_sum = pair_sum
            for prev in chosen:
                key = (prev, qid) if prev < qid else (qid, prev)
                grown_sum += similarity[key]
            chosen.append(qid)
            dfs(position + 1, chosen_mask | masks[qid], grown_sum, chosen)
            chosen.pop()
            dfs(position + 1, chosen_mask, pair_sum, chosen)

        dfs(0, 0, 0.0, [])
        config = SelectionConfig(alpha=alpha, lam=lam, beam_width=32, k_max=len(ids))
        result = beam_search_select(matrix, config)
        beam_value = _oracle_eval(result.chosen, masks, similarity, m, alpha, lam)
        if beam_value == best[0]:
            hits += 1
    assert hits == 50, f"beam search optimal in only {hits}/50 cases"
    budget.check()


def test_criterion_03_metrics_match_double_loop_oracle():
    budget = Budget(5.0)
    rng = random.Random(31337)
    for _ in range(200):
        matrix = _random_instance(rng)
        ids = list(matrix.question_ids)
        subset = rng.sample(ids, rng.randint(0, len(ids)))
        m = len(matrix.feedback_ids)

        # coverage: naive double loop
        covered = 0
        rows = [matrix.question_ids.index(qid) for qid in subset]
        for j in range(m):
            hit = False
            for i in rows:
                if matrix.cells[i][j]:
                    hit = True
            if hit:
                covered += 1
        assert abs(coverage_rate(matrix, subset) - covered / m) < 1e-12

        # jaccard: naive double loop on a random pair
        qa, qb = rng.sample(ids, 2)
        ia, ib = matrix.question_ids.index(qa), matrix.question_ids.index(qb)
        inter = union = 0
        for j in range(m):
            a, b = matrix.cells[ia][j], matrix.cells[ib][j]
            inter += 1 if (a and b) else 0
            union += 1 if (a or b) else 0
        expected_jaccard = 0.0 if union == 0 else inter / union
        assert abs(jaccard(matrix, qa, qb) - expected_jaccard) < 1e-12

        # diversity: naive pairwise double loop
        sorted_subset = sorted(subset)
        if len(sorted_subset) <= 1:
            expected_div = 1.0
        else:
            total = 0.0
            for i, qx in enumerate(sorted_subset):
                pair_sum = 0.0
                for j, qy in enumerate(sorted_subset):
                    if i == j:
                        continue
                    ix, iy = matrix.question_ids.index(qx), matrix.question_ids.index(qy)
                    pi = pu = 0
                    for col in range(m):
                        a, b = matrix.cells[ix][col], matrix.cells[iy][col]
                        pi += 1 if (a and b) else 0
                        pu += 1 if (a or b) else 0
                    pair_sum += 0.0 if pu == 0 else pi / pu
                total += 1.0 - pair_sum / (len(sorted_subset) - 1)
            expected_div = total / len(sorted_subset)
        assert abs(diversity(matrix, subset) - expected_div) < 1e-12
    budget.check()


def test_criterion_04_clustering_matches_union_find_on_100_graphs():
    budget = Budget(5.0)
    rng = random.Random(606060)
    for _ in range(100):
        n = rng.randint(2, 60)
        nodes = tuple(f"q{i:02d}" for i in range(n))
        edges = set()
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < rng.choice([0.02, 0.05, 0.15]):
                    edges.add((nodes[i], nodes[j]))
        graph = SimilarityGraph(nodes=nodes, edges=frozenset(edges), threshold=0.85)

        parent = {node: node for node in nodes}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in edges:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
        groups: dict[str, list[str]] = {}
        for node in nodes:
            groups.setdefault(find(node), []).append(node)
        expected = sorted((sorted(g) for g in groups.values()), key=lambda c: c[0])
        assert clusters(graph) == expected

    # threshold boundary: a pair whose computed cosine is exactly 0.85
    qa = make_question("Is the plan complete for the visit?", "assessment_and_plan", "feedback")
    qb = make_question("Is the plan thorough for the visit?", "assessment_and_plan", "feedback")
    u = EmbeddingVector((1.0, 0.0), "m")
    v = EmbeddingVector((0.85, 0.526782687642637), "m")
    assert cosine_similarity(u, v) == 0.85
    graph = build_similarity_graph([qa, qb], [u, v], threshold=0.85)
    assert len(graph.edges) == 1, "cos == 0.85 must create an edge (inclusive threshold)"
    budget.check()


def test_criterion_05_statistics_match_frozen_oracles():
    budget = Budget(1.0)
    for case in FROZEN:
        one = one_sample_ttest(case["xs"], case["mu0"])
        assert abs(one.statistic - case["one_t"]) < 1e-9
        assert abs(one.p_value - case["one_p"]) < 1e-9
        welch = two_sample_ttest(case["xs"], case["ys"])
        assert abs(welch.statistic - case["welch_t"]) < 1e-9
        assert abs(welch.p_value - case["welch_p"]) < 1e-9
        assert abs(welch.degrees_of_freedom - case["welch_df"]) < 1e-9
        k = min(len(case["xs"]), len(case["ys"]))
        paired = paired_ttest(case["xs"][:k], case["ys"][:k])
        assert abs(paired.statistic - case["paired_t"]) < 1e-9
        assert abs(paired.p_value - case["paired_p"]) < 1e-9
        effect = cohens_d(case["xs"], case["ys"])
        assert abs(effect.cohens_d - case["cohens_d"]) < 1e-9

    symmetric = one_sample_ttest([1, 2, 3, 4, 5], 3)
    assert symmetric.statistic == 0.0 and symmetric.p_value == 1.0
    with pytest.raises(DataError):
        one_sample_ttest([2, 2, 2], 0)
    with pytest.raises(DataError):
        two_sample_ttest([1, 1], [3, 3])
    with pytest.raises(DataError):
        paired_ttest([0.4, 0.6], [0.4, 0.6])
    budget.check()


def test_criterion_06_logistic_regression_contract():
    budget = Budget(10.0)
    rng = random.Random(808)
    features, labels = [], []
    for _ in range(60):
        label = rng.random() < 0.5
        features.append([1.0 if label else 0.0, rng.random(), rng.random()])
        labels.append(label)
    report = fit_logistic(features, labels, LogisticConfig(seed=3))
    assert report.accuracy == 1.0
    assert report.macro_f1 == 1.0

    for _ in range(20):
        n, d = rng.randint(4, 14), rng.randint(1, 5)
        X = np.array([[rng.gauss(0, 1) for _ in range(d + 1)] for _ in range(n)])
        X[:, 0] = 1.0
        y = np.array([float(rng.random() < 0.5) for _ in range(n)])
        w = np.array([rng.gauss(0, 1) for _ in range(d + 1)])
        reg = rng.choice([0.01, 0.1, 1.0, 10.0])
        _, grad = logistic_loss_grad(w, X, y, reg)
        eps = 1e-6
        for j in range(d + 1):
            bump = np.zeros(d + 1)
            bump[j] = eps
            up, _ = logistic_loss_grad(w + bump, X, y, reg)
            down, _ = logistic_loss_grad(w - bump, X, y, reg)
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(grad[j]), 1e-8)
            assert abs(numeric - grad[j]) / denom < 1e-4

    reruns = [fit_logistic(features, labels, LogisticConfig(seed=3)) for _ in range(3)]
    assert reruns[0].weights == reruns[1].weights == reruns[2].weights
    assert reruns[0].intercept == reruns[2].intercept
    budget.check()


_SUBPROCESS_SNIPPET = """
import hashlib, json, sys
from notecheck.corpus import load_encounters
from notecheck.perturb import KINDS, PerturbationSpec, perturb_corpus, perturbed_record

encounters = load_encounters(sys.argv[1])
payload = []
for kind in KINDS:
    spec = PerturbationSpec(kind, seed=20260809, fraction=0.25,
                            target_section="assessment_and_plan" if kind == "delete_section" else None)
    for note in perturb_corpus(spec, encounters, "assessment_and_plan"):
        payload.append(perturbed_record(note))
blob = json.dumps(payload, sort_keys=True).encode()
print(hashlib.sha256(blob).hexdigest())
"""


def test_criterion_07_perturbation_determinism_and_multiset_laws():
    budget = Budget(5.0)
    encounters_path = str(FIXTURES / "encounters.jsonl")
    digests = []
    for _ in range(2):
        out = subprocess.run(
            [sys.executable, "-c", _SUBPROCESS_SNIPPET, encounters_path],
            capture_output=True, text=True, check=True,
        )
        digests.append(out.stdout.strip())
    assert digests[0] == digests[1], "outputs differ across processes"

    encounters = load_encounters(encounters_path)

    def note_multiset(note):
        counted = Counter()
        for section in NOTE_SECTIONS:
            text = note.sections[section]
            if text != EMPTY:
                counted.update(segment_sentences(text))
        return counted

    for encounter in encounters:
        before = note_multiset(encounter.note)
        shuffled = apply(PerturbationSpec("coherence_shuffle", seed=1), encounter)
        assert note_multiset(shuffled.note) == before
        moved = apply(PerturbationSpec("section_shuffle", seed=1), encounter)
        assert note_multiset(moved.note) == before
        deleted = apply(PerturbationSpec("delete_sentence", seed=1), encounter)
        after_delete = note_multiset(deleted.note)
        assert sum(after_delete.values()) < sum(before.values())
        assert not after_delete - before  # nothing new appears
        repeated = apply(PerturbationSpec("repeat_sentence", seed=1), encounter)
        after_repeat = note_multiset(repeated.note)
        assert sum(after_repeat.values()) > sum(before.values())
        assert not before - after_repeat  # nothing disappears
        emptied = apply(
            PerturbationSpec("delete_section", seed=1, target_section="assessment_and_plan"),
            encounter,
        )
        emptied_sections = [
            section for section in NOTE_SECTIONS
            if emptied.note.sections[section] == EMPTY
            and encounter.note.sections[section] != EMPTY
        ]
        assert emptied_sections == ["assessment_and_plan"]
    budget.check()


def _count_judge_backend(encounters):
    """Property mock: "No" iff the section's sentence count is below the
    reference note's count for that transcript."""
    reference = {}
    for encounter in encounters:
        for section in NOTE_SECTIONS:
            text = encounter.note.sections[section]
            count = 0 if text == EMPTY else len(segment_sentences(text))
            reference[(encounter.transcript, section)] = count

    def respond(request):
        user = request.user
        transcript = user.split("Transcript:\n", 1)[1].split("\n\nNote section (", 1)[0]
        section = user.split("\n\nNote section (", 1)[1].split("):\n", 1)[0]
        body = user.split("):\n", 1)[1].split("\n\nQuestion: ", 1)[0]
        count = 0 if body == EMPTY else len(segment_sentences(body))
        return "No" if count < reference[(transcript, section)] else "Yes"

    return respond


def test_criterion_08_robustness_harness_separates_perturbation_classes():
    budget = Budget(10.0)
    encounters = load_encounters(FIXTURES / "encounters.jsonl")
    provider, _, _ = make_provider(default=_count_judge_backend(encounters))
    judge = Judge(provider, PROMPTS)
    checklist = [
        make_question(f"Is quality point {i} covered in the plan?", "assessment_and_plan", "feedback")
        for i in range(5)
    ]
    section = "assessment_and_plan"
    ref_notes = [
        (e.id, e.transcript, section_text(e, section)) for e in encounters
    ]
    ref_table = judge.pass_table(checklist, ref_notes)

    expectations = {
        "delete_sentence": "positive",
        "delete_section": "positive",
        "coherence_shuffle": "zero",
    }
    by_id = {e.id: e for e in encounters}
    for kind, expected in expectations.items():
        spec = PerturbationSpec(
            kind, seed=5,
            target_section=section if kind == "delete_section" else None,
        )
        notes = perturb_corpus(spec, encounters, section)
        assert not any(n.skipped for n in notes)
        pert_notes = [
            (n.source_encounter_id, by_id[n.source_encounter_id].transcript,
             n.note.get(section))
            for n in notes
        ]
        pert_table = judge.pass_table(checklist, pert_notes)
        report = perturbation_delta(ref_table, pert_table, kind)
        # per-note score deltas
        per_note = {}
        for note_id, _, _ in ref_notes:
            ref_score = sum(1 for q in checklist if ref_table[q.id][note_id]) / len(checklist)
            pert_score = sum(1 for q in checklist if pert_table[q.id][note_id]) / len(checklist)
            per_note[note_id] = ref_score - pert_score
        if expected == "positive":
            assert report.checklist_delta > 0
            assert all(delta > 0 for delta in per_note.values()), kind
        else:
            assert report.checklist_delta == 0.0
            assert all(delta == 0.0 for delta in per_note.values()), kind
    budget.check()


def test_criterion_09_enforceability_keep_boundary():
    budget = Budget(1.0)
    question = make_question("Is the plan specific to the visit?", "assessment_and_plan", "feedback")

    def report_for(rate: float):
        failures = round(rate * 10)
        cases = [
            UnitTestCase(
                question_id=question.id,
                encounter_id=f"e{i:02d}",
                original_section_text="original",
                rewritten_section_text="rewritten",
                rewritten_verdict="no" if i < failures else "yes",
            )
            for i in range(10)
        ]
        return enforceability_rate(question, cases)

    assert report_for(0.6).kept is False
    assert report_for(0.7).kept is True
    assert report_for(0.8).kept is True
    budget.check()


def test_criterion_10_end_to_end_mock_pipeline(tmp_path):
    budget = Budget(60.0)
    config = PipelineConfig(paths=PathsConfig(output_dir=str(tmp_path / "out")))
    manifests = [
        run_stage(stage, config)
        for stage in ("ingest", "generate", "refine", "enforce", "select")
    ]
    assert all(m.provider_counters["network_calls"] == 0 for m in manifests)

    out = config.output_dir
    candidates = [json.loads(line) for line in (out / "candidates.jsonl").read_text().splitlines()]
    assert len(candidates) == 30
    assert len({c["text"] for c in candidates}) == 30

    refined = [json.loads(line) for line in (out / "refined.jsonl").read_text().splitlines()]
    merged = [q for q in refined if q["origin"] == "merged"]
    assert len(refined) == 24 and len(merged) == 6

    # dedup soundness: no surviving pair at or above the threshold under
    # the same embedding backend the pipeline used
    script = MockScript.load(config.provider.mock_script)
    backend = MockEmbeddingBackend(dim=script.dim, seed=0, overrides=script.dense_overrides())
    vectors = backend.embed_texts([q["text"] for q in refined], "text-embedding-3-large")
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            cos = cosine_similarity(
                EmbeddingVector(tuple(vectors[i]), "m"),
                EmbeddingVector(tuple(vectors[j]), "m"),
            )
            assert cos < 0.85, (refined[i]["text"], refined[j]["text"], cos)

    # the scripted low-enforceability question is gone
    enforced = [json.loads(line) for line in (out / "enforced.jsonl").read_text().splitlines()]
    assert len(enforced) == 23
    dropped_texts = {q["text"] for q in refined} - {q["text"] for q in enforced}
    assert dropped_texts == {"Is the assessment and plan free of speculative language?"}

    selection = json.loads((out / "selection.json").read_text())
    matrix = CoverageMatrix.from_record(
        json.loads((out / "coverage_matrix.json").read_text())
    )
    chosen = selection["chosen"]
    rng = random.Random(101)
    pool = sorted(matrix.question_ids)
    beaten = 0
    for _ in range(100):
        candidate = rng.sample(pool, len(chosen))
        value = objective(matrix, candidate, config.selection)
        if selection["objective"] > value:
            beaten += 1
    assert beaten == 100, f"selection beat only {beaten}/100 random subsets"
    budget.check()


def test_criterion_11_preference_significance_at_109_pairs():
    budget = Budget(1.0)
    n = 109
    base = [math.sin(i * 0.7) for i in range(n)]
    mean = sum(base) / n
    sd = math.sqrt(sum((b - mean) ** 2 for b in base) / (n - 1))
    diffs = [0.05 + 0.10 * (b - mean) / sd for b in base]
    preferred = [0.5 + d for d in diffs]
    non_preferred = [0.5] * n
    result = paired_ttest(preferred, non_preferred)
    expected_t = 0.05 / (0.10 / math.sqrt(n))
    assert abs(result.statistic - expected_t) < 1e-9
    assert result.p_value < 0.001
    assert result.mean_difference > 0
    budget.check()
