"""Pipeline orchestration: stages, config, manifests, report bundle.

One invocation runs one stage against a config (JSON). Stages write
their outputs atomically into the configured output directory and
append a manifest record (config digest, input/output digests, provider
counters, timings), so identical reruns are verifiable byte-for-byte.

Exit codes: 0 success, 1 usage, 2 data error, 3 provider error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import corpus as corpus_mod
from . import evalstats, perturb
from .corpus import (
    FEEDBACK_SECTIONS,
    FeedbackCorpus,
    load_encounters,
    load_feedback,
    load_preference_pairs,
    section_text,
    write_jsonl,
    write_text,
)
from .distill import (
    ChecklistQuestion,
    Distiller,
    question_from_record,
    question_record,
)
from .enforce import Enforcer, checklist_enforceability
from .errors import (
    DataError,
    NotecheckError,
    ProviderError,
    StageInputError,
    UntestableQuestionError,
    UsageError,
)
from .judge import Judge
from .mockscript import build_mock_backends
from .prompts import PromptLibrary
from .provider import LiveBackend, Provider, ResponseCache
from .selection import (
    CoverageMatrix,
    SelectionConfig,
    beam_search_select,
    build_coverage_matrix,
    coverage_rate,
    diversity,
)

logger = logging.getLogger(__name__)

FIXTURES_DIR = Path(__file__).parent / "fixtures"

STAGES = (
    "ingest", "generate", "refine", "enforce", "select", "score", "perturb",
    "eval-robustness", "eval-predictive", "eval-preference", "eval-diversity",
    "report",
)

# stage -> list of (output file it needs, stage that produces it)
REQUIRED_INPUTS: dict[str, list[tuple[str, str]]] = {
    "ingest": [],
    "generate": [("feedback.jsonl", "ingest")],
    "refine": [("candidates.jsonl", "generate")],
    "enforce": [("refined.jsonl", "refine"), ("encounters.jsonl", "ingest")],
    "select": [("enforced.jsonl", "enforce"), ("feedback.jsonl", "ingest")],
    "score": [("checklist.jsonl", "select"), ("encounters.jsonl", "ingest")],
    "perturb": [("encounters.jsonl", "ingest")],
    "eval-robustness": [
        ("checklist.jsonl", "select"), ("baseline.jsonl", "generate"),
        ("encounters.jsonl", "ingest"), ("perturb_audit.jsonl", "perturb"),
    ],
    "eval-predictive": [
        ("checklist.jsonl", "select"), ("baseline.jsonl", "generate"),
        ("feedback.jsonl", "ingest"), ("coverage_matrix.json", "select"),
    ],
    "eval-preference": [
        ("checklist.jsonl", "select"), ("baseline.jsonl", "generate"),
        ("pairs.jsonl", "ingest"),
    ],
    "eval-diversity": [
        ("checklist.jsonl", "select"), ("baseline.jsonl", "generate"),
        ("feedback.jsonl", "ingest"), ("coverage_matrix.json", "select"),
    ],
    "report": [],
}


def _derive_seed(base: int, label: str) -> int:
    digest = hashlib.sha256(f"{base}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass(frozen=True)
class ProviderConfig:
    backend: str = "mock"  # mock | live
    endpoint: str = "https://api.openai.com/v1"
    credential_env: str = "NOTECHECK_API_KEY"
    generator_model: str = "gpt-4o"
    judge_model: str = "gpt-4o"
    embedding_model: str = "text-embedding-3-large"
    tagging_model: str = "o3-mini"
    rewriter_model: str = "gpt-4.1-mini"
    batch_size: int = 64
    retries: int = 3
    mock_script: str = str(FIXTURES_DIR / "mock_script.json")


@dataclass(frozen=True)
class PathsConfig:
    feedback: str = str(FIXTURES_DIR / "feedback.jsonl")
    encounters: str = str(FIXTURES_DIR / "encounters.jsonl")
    pairs: str = str(FIXTURES_DIR / "preference_pairs.jsonl")
    external_perturbations: str | None = str(FIXTURES_DIR / "external_perturbations.jsonl")
    output_dir: str = "notecheck_out"
    cache: str | None = None  # default: <output_dir>/cache.jsonl
    prompts_dir: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    section: str = "assessment_and_plan"
    dedup_threshold: float = 0.85
    enforce_n: int = 10
    enforce_threshold: float = 0.7
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    batch_count: int = 8
    perturbation_fraction: float = 0.25
    seed: int = 20260809

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output_dir)

    @property
    def cache_path(self) -> Path:
        if self.paths.cache:
            return Path(self.paths.cache)
        return self.output_dir / "cache.jsonl"

    def batch_seed(self) -> int:
        return _derive_seed(self.seed, "batches")

    def enforce_seed(self) -> int:
        return _derive_seed(self.seed, "enforce")

    def stats_seed(self) -> int:
        return _derive_seed(self.seed, "stats")

    def perturbation_specs(self) -> list[perturb.PerturbationSpec]:
        specs = []
        for kind in perturb.KINDS:
            specs.append(
                perturb.PerturbationSpec(
                    kind=kind,
                    seed=_derive_seed(self.seed, f"perturb:{kind}"),
                    fraction=self.perturbation_fraction,
                    target_section=self.section if kind == "delete_section" else None,
                )
            )
        return specs

    def digest(self) -> str:
        payload = {
            "paths": self.paths.__dict__,
            "provider": self.provider.__dict__,
            "section": self.section,
            "dedup_threshold": self.dedup_threshold,
            "enforce_n": self.enforce_n,
            "enforce_threshold": self.enforce_threshold,
            "selection": self.selection.__dict__,
            "batch_count": self.batch_count,
            "perturbation_fraction": self.perturbation_fraction,
            "seed": self.seed,
        }
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode("utf-8")
        ).hexdigest()


def load_config(path: str | Path | None) -> PipelineConfig:
    """Config file (JSON) merged over the paper-faithful defaults."""
    if path is None:
        return PipelineConfig()
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        paths = PathsConfig(**{**PathsConfig().__dict__, **raw.get("paths", {})})
        provider = ProviderConfig(**{**ProviderConfig().__dict__, **raw.get("provider", {})})
        selection_raw = dict(raw.get("selection", {}))
        if "lambda" in selection_raw:
            selection_raw["lam"] = selection_raw.pop("lambda")
        selection = SelectionConfig(**{**SelectionConfig().__dict__, **selection_raw})
        top = {
            key: raw[key]
            for key in (
                "section", "dedup_threshold", "enforce_n", "enforce_threshold",
                "batch_count", "perturbation_fraction", "seed",
            )
            if key in raw
        }
        return PipelineConfig(paths=paths, provider=provider, selection=selection, **top)
    except TypeError as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc


@dataclass
class RunManifest:
    stage: str
    started: str
    duration_ms: float
    config_digest: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    provider_counters: dict[str, int]

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class Runtime:
    """Provider, prompts, and helpers shared by the stage functions."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.prompts = PromptLibrary(config.paths.prompts_dir)
        cache = ResponseCache(config.cache_path)
        if config.provider.backend == "mock":
            encounters = load_encounters(config.paths.encounters)
            chat, embed = build_mock_backends(config.provider.mock_script, encounters)
        elif config.provider.backend == "live":
            live = LiveBackend(config.provider.endpoint, config.provider.credential_env)
            chat, embed = live, live
        else:
            raise UsageError(f"unknown provider backend {config.provider.backend!r}")
        self.provider = Provider(
            chat, embed, cache,
            batch_size=config.provider.batch_size,
            retries=config.provider.retries,
            retry_base_delay=0.0 if config.provider.backend == "mock" else 0.5,
        )
        self.distiller = Distiller(
            self.provider, self.prompts,
            generator_model=config.provider.generator_model,
            embedding_model=config.provider.embedding_model,
            tagging_model=config.provider.tagging_model,
            dedup_threshold=config.dedup_threshold,
        )
        self.judge = Judge(self.provider, self.prompts, config.provider.judge_model)
        self.enforcer = Enforcer(
            self.provider, self.prompts, self.judge,
            rewriter_model=config.provider.rewriter_model,
            cases_per_question=config.enforce_n,
            threshold=config.enforce_threshold,
        )

    def out(self, name: str) -> Path:
        return self.config.output_dir / name

    def read_questions(self, name: str) -> list[ChecklistQuestion]:
        return [
            question_from_record(record)
            for _, record in corpus_mod.read_jsonl(self.out(name))
        ]

    def read_feedback(self) -> FeedbackCorpus:
        return load_feedback(self.out("feedback.jsonl"), section_filter=self.config.section)


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_json(path: Path, payload) -> None:
    write_text(path, json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            _fmt(cell) if isinstance(cell, float) else str(cell) for cell in row
        ))
    write_text(path, "\n".join(lines) + "\n")


# -- stages --


def stage_ingest(rt: Runtime) -> list[Path]:
    config = rt.config
    feedback = load_feedback(config.paths.feedback)
    encounters = load_encounters(config.paths.encounters)
    pairs = load_preference_pairs(config.paths.pairs, config.section)
    corpus_mod.save_feedback(feedback, rt.out("feedback.jsonl"))
    corpus_mod.save_encounters(encounters, rt.out("encounters.jsonl"))
    corpus_mod.save_preference_pairs(pairs, rt.out("pairs.jsonl"))
    return [rt.out("feedback.jsonl"), rt.out("encounters.jsonl"), rt.out("pairs.jsonl")]


def stage_generate(rt: Runtime) -> list[Path]:
    config = rt.config
    corpus = rt.read_feedback()
    if not corpus.items:
        raise DataError(f"no feedback tagged {config.section!r}")
    baseline = rt.distiller.generate_baseline(config.section)
    batches = corpus_mod.split_batches(
        corpus, min(config.batch_count, len(corpus.items)), config.batch_seed()
    )
    candidates: list[ChecklistQuestion] = []
    for batch in batches:
        candidates.extend(rt.distiller.propose_from_feedback(batch, config.section))
    logger.info(
        "generated %d baseline and %d candidate questions from %d batches",
        len(baseline), len(candidates), len(batches),
    )
    write_jsonl(rt.out("baseline.jsonl"), (question_record(q) for q in baseline))
    write_jsonl(rt.out("candidates.jsonl"), (question_record(q) for q in candidates))
    return [rt.out("baseline.jsonl"), rt.out("candidates.jsonl")]


def stage_refine(rt: Runtime) -> list[Path]:
    candidates = rt.read_questions("candidates.jsonl")
    result = rt.distiller.refine(candidates)
    write_jsonl(rt.out("refined.jsonl"), (question_record(q) for q in result.kept))
    write_jsonl(
        rt.out("refine_dropped.jsonl"),
        ({"reason": reason, **question_record(q)} for q, reason in result.dropped),
    )
    logger.info(
        "refined %d candidates to %d questions (%d dropped, %d dedup passes)",
        len(candidates), len(result.kept), len(result.dropped), result.dedup_passes,
    )
    return [rt.out("refined.jsonl"), rt.out("refine_dropped.jsonl")]


def stage_enforce(rt: Runtime) -> list[Path]:
    questions = rt.read_questions("refined.jsonl")
    encounters = load_encounters(rt.out("encounters.jsonl"))
    seed = rt.config.enforce_seed()
    reports = []
    records = []
    kept_questions = []
    for question in sorted(questions, key=lambda q: q.id):
        try:
            report = rt.enforcer.run_question(question, encounters, seed=seed)
        except UntestableQuestionError as exc:
            logger.warning("%s", exc)
            records.append({"question_id": question.id, "untestable": True})
            continue
        reports.append(report)
        records.append(
            {
                "question_id": question.id,
                "rate": report.rate,
                "kept": report.kept,
                "n_cases": len(report.cases),
                "cases": [
                    {"encounter_id": c.encounter_id, "rewritten_verdict": c.rewritten_verdict}
                    for c in report.cases
                ],
            }
        )
        if report.kept:
            kept_questions.append(replace(question, enforceability=report.rate))
    write_jsonl(rt.out("enforce_reports.jsonl"), records)
    write_jsonl(rt.out("enforced.jsonl"), (question_record(q) for q in kept_questions))
    lines = [
        f"{'question':14} {'rate':>6} {'kept':>5} {'cases':>5}",
    ]
    for record in records:
        if record.get("untestable"):
            lines.append(f"{record['question_id']:14} {'-':>6} {'-':>5} {'-':>5}  untestable")
        else:
            lines.append(
                f"{record['question_id']:14} {record['rate']:>6.2f} "
                f"{str(record['kept']):>5} {record['n_cases']:>5}"
            )
    if reports:
        lines.append("")
        lines.append(f"checklist enforceability (mean rate): {checklist_enforceability(reports):.4f}")
        lines.append(f"kept {len(kept_questions)} of {len(questions)} questions")
    write_text(rt.out("enforce_summary.txt"), "\n".join(lines) + "\n")
    return [rt.out("enforce_reports.jsonl"), rt.out("enforced.jsonl"), rt.out("enforce_summary.txt")]


def stage_select(rt: Runtime) -> list[Path]:
    questions = rt.read_questions("enforced.jsonl")
    corpus = rt.read_feedback()
    matrix = build_coverage_matrix(
        rt.provider, rt.prompts, questions, corpus,
        model_id=rt.config.provider.generator_model,
    )
    _write_json(rt.out("coverage_matrix.json"), matrix.to_record())
    result = beam_search_select(matrix, rt.config.selection)
    _write_json(
        rt.out("selection.json"),
        {
            "chosen": list(result.chosen),
            "k": result.k,
            "coverage": result.coverage,
            "diversity": result.diversity,
            "objective": result.objective,
            "trace": list(result.trace),
        },
    )
    _write_csv(
        rt.out("objective_vs_k.csv"),
        ["k", "coverage", "diversity", "objective"],
        [[t["k"], t["coverage"], t["diversity"], t["objective"]] for t in result.trace],
    )
    by_id = {q.id: q for q in questions}
    write_jsonl(
        rt.out("checklist.jsonl"),
        (question_record(by_id[qid]) for qid in result.chosen),
    )
    logger.info(
        "selected %d questions: coverage %.4f diversity %.4f objective %.5f",
        result.k, result.coverage, result.diversity, result.objective,
    )
    return [
        rt.out("coverage_matrix.json"), rt.out("selection.json"),
        rt.out("objective_vs_k.csv"), rt.out("checklist.jsonl"),
    ]


def stage_score(rt: Runtime) -> list[Path]:
    checklist = rt.read_questions("checklist.jsonl")
    encounters = load_encounters(rt.out("encounters.jsonl"))
    verdict_records = []
    score_rows = []
    for encounter in sorted(encounters, key=lambda e: e.id):
        text = section_text(encounter, rt.config.section)
        verdicts = rt.judge.verdicts_for_note(
            checklist, encounter.transcript, text, encounter.id
        )
        from .judge import note_score_from_verdicts

        score = note_score_from_verdicts(checklist, verdicts, encounter.id)
        score_rows.append([encounter.id, score.passed, score.total, score.score])
        for verdict in verdicts:
            verdict_records.append(
                {
                    "note_ref": verdict.note_ref,
                    "question_id": verdict.question_id,
                    "answer": verdict.answer,
                }
            )
    write_jsonl(rt.out("verdicts.jsonl"), verdict_records)
    _write_csv(rt.out("note_scores.csv"), ["note_ref", "passed", "total", "score"], score_rows)
    return [rt.out("verdicts.jsonl"), rt.out("note_scores.csv")]


def stage_perturb(rt: Runtime) -> list[Path]:
    encounters = load_encounters(rt.out("encounters.jsonl"))
    outputs = []
    audits = []
    for spec in rt.config.perturbation_specs():
        notes = perturb.perturb_corpus(spec, encounters, rt.config.section)
        path = rt.out(f"perturbed_{spec.kind}.jsonl")
        write_jsonl(path, (perturb.perturbed_record(n) for n in notes))
        outputs.append(path)
        for note in notes:
            audits.append(
                {
                    "source_encounter_id": note.source_encounter_id,
                    "kind": note.kind,
                    "skipped": note.skipped,
                    "edits": list(note.audit),
                }
            )
    external_path = rt.config.paths.external_perturbations
    if external_path:
        external = perturb.load_external_perturbations(external_path)
        by_kind: dict[str, list[perturb.PerturbedNote]] = {}
        for note in external:
            by_kind.setdefault(note.kind, []).append(note)
        for kind in sorted(by_kind):
            path = rt.out(f"perturbed_{kind}.jsonl")
            write_jsonl(path, (perturb.perturbed_record(n) for n in by_kind[kind]))
            outputs.append(path)
            for note in by_kind[kind]:
                audits.append(
                    {
                        "source_encounter_id": note.source_encounter_id,
                        "kind": note.kind,
                        "skipped": note.skipped,
                        "edits": list(note.audit),
                    }
                )
    audit_path = rt.out("perturb_audit.jsonl")
    write_jsonl(audit_path, audits)
    outputs.append(audit_path)
    return outputs


def _pass_table_for(
    rt: Runtime,
    checklist: list[ChecklistQuestion],
    notes: list[tuple[str, str, str]],
) -> dict[str, dict[str, bool]]:
    return rt.judge.pass_table(checklist, notes)


def stage_eval_robustness(rt: Runtime) -> list[Path]:
    config = rt.config
    encounters = {e.id: e for e in load_encounters(rt.out("encounters.jsonl"))}
    checklists = {
        "feedback": rt.read_questions("checklist.jsonl"),
        "baseline": rt.read_questions("baseline.jsonl"),
    }
    perturbed_files = sorted(config.output_dir.glob("perturbed_*.jsonl"))
    if not perturbed_files:
        raise StageInputError("no perturbed_*.jsonl outputs; run perturb first", "perturb")
    results: dict[str, dict] = {}
    for path in perturbed_files:
        kind = path.name[len("perturbed_"):-len(".jsonl")]
        notes = [
            perturb.perturbed_from_record(record)
            for _, record in corpus_mod.read_jsonl(path)
        ]
        usable = [n for n in notes if not n.skipped and n.source_encounter_id in encounters]
        if not usable:
            logger.warning("no usable perturbed notes for %s; skipped", kind)
            continue
        kind_result: dict[str, dict] = {}
        deltas_by_checklist: dict[str, list[float]] = {}
        for name, checklist in checklists.items():
            ref_notes = [
                (
                    n.source_encounter_id,
                    encounters[n.source_encounter_id].transcript,
                    section_text(encounters[n.source_encounter_id], config.section),
                )
                for n in usable
            ]
            pert_notes = [
                (
                    n.source_encounter_id,
                    encounters[n.source_encounter_id].transcript,
                    n.note.get(config.section),
                )
                for n in usable
            ]
            ref_table = _pass_table_for(rt, checklist, ref_notes)
            pert_table = _pass_table_for(rt, checklist, pert_notes)
            delta = evalstats.perturbation_delta(ref_table, pert_table, kind)
            per_question = [delta.per_question_delta[qid] for qid in sorted(delta.per_question_delta)]
            deltas_by_checklist[name] = per_question
            entry = {
                "checklist_delta": delta.checklist_delta,
                "delta_sum": delta.delta_sum,
                "n_notes": delta.n_notes,
                "n_questions": len(per_question),
                "per_question_delta": delta.per_question_delta,
            }
            try:
                test = evalstats.one_sample_ttest(per_question, 0.0)
                entry["ttest"] = {
                    "t": test.statistic, "df": test.degrees_of_freedom, "p": test.p_value,
                }
            except DataError as exc:
                entry["ttest"] = {"error": str(exc)}
            kind_result[name] = entry
        comparison: dict = {}
        try:
            test = evalstats.two_sample_ttest(
                deltas_by_checklist["feedback"], deltas_by_checklist["baseline"]
            )
            comparison["welch"] = {
                "t": test.statistic, "df": test.degrees_of_freedom, "p": test.p_value,
            }
        except DataError as exc:
            comparison["welch"] = {"error": str(exc)}
        try:
            comparison["cohens_d"] = evalstats.cohens_d(
                deltas_by_checklist["feedback"], deltas_by_checklist["baseline"]
            ).cohens_d
        except DataError as exc:
            comparison["cohens_d"] = None
            comparison["cohens_d_error"] = str(exc)
        kind_result["comparison"] = comparison
        results[kind] = kind_result
    _write_json(rt.out("robustness.json"), results)
    rows = []
    for kind in sorted(results):
        for name in ("feedback", "baseline"):
            entry = results[kind].get(name)
            if not entry:
                continue
            ttest = entry["ttest"]
            rows.append([
                kind, name, entry["n_notes"], entry["n_questions"],
                entry["checklist_delta"], entry["delta_sum"],
                ttest.get("t", ""), ttest.get("p", ttest.get("error", "")),
            ])
    _write_csv(
        rt.out("robustness.csv"),
        ["kind", "checklist", "n_notes", "n_questions", "mean_delta", "sum_delta", "t", "p"],
        rows,
    )
    return [rt.out("robustness.json"), rt.out("robustness.csv")]


def _sub_matrix(matrix: CoverageMatrix, ids: list[str]) -> CoverageMatrix:
    rows = tuple(matrix.cells[matrix.row_index(qid)] for qid in ids)
    return CoverageMatrix(
        question_ids=tuple(ids), feedback_ids=matrix.feedback_ids, cells=rows
    )


def _baseline_matrix(rt: Runtime) -> tuple[list[ChecklistQuestion], CoverageMatrix]:
    baseline = rt.read_questions("baseline.jsonl")
    corpus = rt.read_feedback()
    matrix = build_coverage_matrix(
        rt.provider, rt.prompts, baseline, corpus,
        model_id=rt.config.provider.generator_model,
    )
    return baseline, matrix


def _predictive_for(
    rt: Runtime, matrix: CoverageMatrix, corpus: FeedbackCorpus
) -> dict:
    ratings = {item.id: item.star_rating for item in corpus.items}
    usable = [
        fid for fid in matrix.feedback_ids if ratings.get(fid) in (1, 5)
    ]
    if not usable:
        raise DataError("no feedback rated 1 or 5 for the predictive task")
    column_of = {fid: j for j, fid in enumerate(matrix.feedback_ids)}
    features = []
    labels = []
    for fid in usable:
        j = column_of[fid]
        features.append([1.0 if row[j] else 0.0 for row in matrix.cells])
        labels.append(ratings[fid] == 5)
    report = evalstats.fit_logistic(
        features, labels,
        evalstats.LogisticConfig(seed=rt.config.stats_seed()),
        feature_names=list(matrix.question_ids),
    )
    return {
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "chosen_l2": report.chosen_l2,
        "n_train": report.n_train,
        "n_test": report.n_test,
        "intercept": report.intercept,
        "weights": report.weights,
    }


def stage_eval_predictive(rt: Runtime) -> list[Path]:
    corpus = rt.read_feedback()
    matrix = CoverageMatrix.from_record(
        json.loads(rt.out("coverage_matrix.json").read_text(encoding="utf-8"))
    )
    chosen = [q.id for q in rt.read_questions("checklist.jsonl")]
    payload = {"feedback": _predictive_for(rt, _sub_matrix(matrix, chosen), corpus)}
    _, baseline_matrix = _baseline_matrix(rt)
    payload["baseline"] = _predictive_for(rt, baseline_matrix, corpus)
    _write_json(rt.out("predictive.json"), payload)
    return [rt.out("predictive.json")]


def stage_eval_preference(rt: Runtime) -> list[Path]:
    pairs = load_preference_pairs(rt.out("pairs.jsonl"), rt.config.section)
    payload = {}
    for name, file in (("feedback", "checklist.jsonl"), ("baseline", "baseline.jsonl")):
        checklist = rt.read_questions(file)
        try:
            report = evalstats.preference_correlation(checklist, pairs, rt.judge)
            payload[name] = {
                "n_pairs": report.n_pairs,
                "n_excluded": report.n_excluded,
                "preferred_mean": report.preferred_mean,
                "non_preferred_mean": report.non_preferred_mean,
                "mean_difference": report.test.mean_difference,
                "t": report.test.statistic,
                "df": report.test.degrees_of_freedom,
                "p": report.test.p_value,
                "significant": report.significant,
            }
        except DataError as exc:
            payload[name] = {"error": str(exc)}
    _write_json(rt.out("preference.json"), payload)
    return [rt.out("preference.json")]


def stage_eval_diversity(rt: Runtime) -> list[Path]:
    corpus = rt.read_feedback()
    matrix = CoverageMatrix.from_record(
        json.loads(rt.out("coverage_matrix.json").read_text(encoding="utf-8"))
    )
    chosen = [q.id for q in rt.read_questions("checklist.jsonl")]
    vectors = rt.provider.embed(
        [item.text for item in corpus.items], rt.config.provider.embedding_model
    )
    by_id = {item.id: vec for item, vec in zip(corpus.items, vectors)}
    payload = {}
    for name, (ids, mat) in {
        "feedback": (chosen, _sub_matrix(matrix, chosen)),
        "baseline": (None, None),
    }.items():
        if name == "baseline":
            baseline, mat = _baseline_matrix(rt)
            ids = [q.id for q in baseline]
        distances = evalstats.cluster_distances(mat, by_id)
        payload[name] = {
            "k": len(ids),
            "coverage": coverage_rate(mat, ids),
            "diversity": diversity(mat, ids),
            "intra_cluster_distance": distances.intra,
            "inter_cluster_distance": distances.inter,
        }
    _write_json(rt.out("diversity.json"), payload)
    return [rt.out("diversity.json")]


def stage_report(rt: Runtime) -> list[Path]:
    out = rt.config.output_dir / "report"
    produced: list[Path] = []
    absent: list[str] = []

    def have(name: str) -> bool:
        return rt.out(name).exists()

    summary: list[str] = ["checklist evaluation report", ""]

    if have("diversity.json"):
        data = json.loads(rt.out("diversity.json").read_text(encoding="utf-8"))
        rows = []
        for name in sorted(data):
            entry = data[name]
            rows.append([
                name, entry["k"], entry["coverage"], entry["diversity"],
                entry["intra_cluster_distance"] if entry["intra_cluster_distance"] is not None else "",
                entry["inter_cluster_distance"] if entry["inter_cluster_distance"] is not None else "",
            ])
        path = out / "checklist_eval.csv"
        _write_csv(path, ["checklist", "k", "coverage", "diversity", "intra_dist", "inter_dist"], rows)
        produced.append(path)
        summary.append("coverage/diversity: see checklist_eval.csv")
    else:
        absent.append("coverage/diversity (run eval-diversity)")

    if have("enforce_reports.jsonl"):
        rows = []
        for _, record in corpus_mod.read_jsonl(rt.out("enforce_reports.jsonl")):
            if record.get("untestable"):
                rows.append([record["question_id"], "", "untestable", 0])
            else:
                rows.append([
                    record["question_id"], record["rate"], record["kept"], record["n_cases"],
                ])
        path = out / "enforceability.csv"
        _write_csv(path, ["question_id", "rate", "kept", "n_cases"], rows)
        produced.append(path)
        summary.append("enforceability: see enforceability.csv")
    else:
        absent.append("enforceability (run enforce)")

    if have("objective_vs_k.csv"):
        path = out / "objective_vs_k.csv"
        write_text(path, rt.out("objective_vs_k.csv").read_text(encoding="utf-8"))
        produced.append(path)
        summary.append("objective-vs-k curve: see objective_vs_k.csv")
    else:
        absent.append("objective-vs-k curve (run select)")

    if have("robustness.json"):
        data = json.loads(rt.out("robustness.json").read_text(encoding="utf-8"))
        rows = []
        for kind in sorted(data):
            for name in ("feedback", "baseline"):
                entry = data[kind].get(name)
                if not entry:
                    continue
                ttest = entry.get("ttest", {})
                rows.append([
                    kind, name, entry["checklist_delta"], entry["delta_sum"],
                    ttest.get("t", ""), ttest.get("p", ttest.get("error", "")),
                ])
        path = out / "robustness.csv"
        _write_csv(path, ["kind", "checklist", "mean_delta", "sum_delta", "t", "p"], rows)
        produced.append(path)
        summary.append("perturbation robustness: see robustness.csv")
    else:
        absent.append("perturbation robustness (run eval-robustness)")

    if have("predictive.json"):
        data = json.loads(rt.out("predictive.json").read_text(encoding="utf-8"))
        rows = []
        for name in sorted(data):
            entry = data[name]
            if "error" in entry:
                rows.append([name, "", "", entry["error"]])
            else:
                rows.append([name, entry["accuracy"], entry["macro_f1"], ""])
        path = out / "predictive.csv"
        _write_csv(path, ["checklist", "accuracy", "macro_f1", "note"], rows)
        produced.append(path)
        summary.append("predictive power: see predictive.csv")
    else:
        absent.append("predictive power (run eval-predictive)")

    if have("preference.json"):
        data = json.loads(rt.out("preference.json").read_text(encoding="utf-8"))
        rows = []
        for name in sorted(data):
            entry = data[name]
            if "error" in entry:
                rows.append([name, "", "", "", entry["error"]])
            else:
                rows.append([
                    name, entry["n_pairs"], entry["mean_difference"],
                    entry["p"], "significant" if entry["significant"] else "not significant",
                ])
        path = out / "preference.csv"
        _write_csv(path, ["checklist", "n_pairs", "mean_difference", "p", "verdict"], rows)
        produced.append(path)
        summary.append("preference agreement: see preference.csv")
    else:
        absent.append("preference agreement (run eval-preference)")

    if not produced:
        raise StageInputError("no evaluation outputs found; run the eval stages first", "eval-diversity")
    if absent:
        summary.append("")
        summary.append("absent sections:")
        summary.extend(f"  - {item}" for item in absent)
    summary_path = out / "summary.txt"
    write_text(summary_path, "\n".join(summary) + "\n")
    produced.append(summary_path)
    return produced


STAGE_FUNCTIONS = {
    "ingest": stage_ingest,
    "generate": stage_generate,
    "refine": stage_refine,
    "enforce": stage_enforce,
    "select": stage_select,
    "score": stage_score,
    "perturb": stage_perturb,
    "eval-robustness": stage_eval_robustness,
    "eval-predictive": stage_eval_predictive,
    "eval-preference": stage_eval_preference,
    "eval-diversity": stage_eval_diversity,
    "report": stage_report,
}


def run_stage(name: str, config: PipelineConfig) -> RunManifest:
    """Run one pipeline stage; returns (and appends) its manifest."""
    if name not in STAGE_FUNCTIONS:
        raise UsageError(f"unknown stage {name!r}; choose from {', '.join(STAGES)}")
    config.output_dir.mkdir(parents=True, exist_ok=True)
    inputs: dict[str, str] = {}
    for filename, producer in REQUIRED_INPUTS[name]:
        path = config.output_dir / filename
        if not path.exists():
            raise StageInputError(
                f"stage {name!r} needs {filename}; run {producer} first", producer
            )
        inputs[filename] = _file_digest(path)
    rt = Runtime(config)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    outputs = STAGE_FUNCTIONS[name](rt)
    duration_ms = (time.perf_counter() - t0) * 1000.0
    manifest = RunManifest(
        stage=name,
        started=started,
        duration_ms=duration_ms,
        config_digest=config.digest(),
        inputs=inputs,
        outputs={
            str(path.relative_to(config.output_dir)): _file_digest(path)
            for path in outputs
        },
        provider_counters=rt.provider.stats.as_dict(),
    )
    manifest_path = config.output_dir / "manifest.jsonl"
    with manifest_path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(manifest.as_dict(), sort_keys=True) + "\n")
    return manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="notecheck",
        description="Distill user feedback into note-quality checklists and evaluate them.",
    )
    parser.add_argument("--config", help="JSON config file (defaults are paper-faithful)")
    parser.add_argument(
        "--stage", required=True,
        help=f"pipeline stage: one of {', '.join(STAGES)}, or 'all'",
    )
    parser.add_argument("--section", help="note section under study")
    parser.add_argument("--seed", type=int, help="base seed override")
    parser.add_argument("--mock", action="store_true", help="force the mock provider")
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        config = load_config(args.config)
        if args.section:
            if args.section not in FEEDBACK_SECTIONS:
                raise UsageError(f"unknown section {args.section!r}")
            config = replace(config, section=args.section)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.mock:
            config = replace(config, provider=replace(config.provider, backend="mock"))
        stages = list(STAGES) if args.stage == "all" else [args.stage]
        for stage in stages:
            manifest = run_stage(stage, config)
            print(
                f"{stage}: ok ({manifest.duration_ms:.0f} ms, "
                f"{len(manifest.outputs)} output file(s))"
            )
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NotecheckError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
