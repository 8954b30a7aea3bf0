"""Quantitative evaluation: perturbation deltas, hypothesis tests,
effect size, predictive power, cluster distances, preference agreement.

The t-distribution CDF is computed in-repo via the regularized
incomplete beta function (continued fraction, absolute tolerance
1e-12), and the rating classifier is an in-repo L2-regularized logistic
regression trained by gradient descent with backtracking line search,
so results are bit-reproducible with no statistical package in the
loop. Means use compensated summation.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass

import numpy as np

from .distill import ChecklistQuestion
from .errors import DataError
from .judge import Judge
from .corpus import PreferencePair
from .provider import EmbeddingVector, cosine_similarity
from .selection import CoverageMatrix

logger = logging.getLogger(__name__)

_BETA_TOL = 1e-12
_BETA_MAX_ITER = 300


# -- special functions --


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) via the standard continued fraction (modified Lentz).

    Uses the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) to stay in the
    rapidly converging regime; absolute tolerance 1e-12.
    """
    if a <= 0 or b <= 0:
        raise DataError("incomplete beta requires a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        numerator = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + numerator * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numerator / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        numerator = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + numerator * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + numerator / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_TOL:
            return h
    raise DataError("incomplete beta continued fraction did not converge")


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T_df| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)."""
    if df <= 0:
        raise DataError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


# -- sample moments --


def _mean(xs) -> float:
    return math.fsum(xs) / len(xs)


def _sample_variance(xs, mean: float) -> float:
    return math.fsum((x - mean) ** 2 for x in xs) / (len(xs) - 1)


# -- hypothesis tests and effect size --


@dataclass(frozen=True)
class TestResult:
    statistic: float
    degrees_of_freedom: float
    p_value: float
    mean_difference: float


@dataclass(frozen=True)
class EffectSize:
    cohens_d: float


def one_sample_ttest(xs, mu0: float) -> TestResult:
    """t = (mean - mu0) / (s / sqrt(n)), df = n - 1, two-sided p."""
    xs = list(xs)
    if len(xs) < 2:
        raise DataError("one-sample t-test needs at least 2 observations")
    mean = _mean(xs)
    variance = _sample_variance(xs, mean)
    if variance == 0.0:
        raise DataError("one-sample t-test undefined for zero-variance data")
    n = len(xs)
    t = (mean - mu0) / math.sqrt(variance / n)
    df = n - 1
    return TestResult(t, float(df), t_two_sided_p(t, df), mean - mu0)


def two_sample_ttest(xs, ys) -> TestResult:
    """Welch's unequal-variance t-test with Welch-Satterthwaite df."""
    xs, ys = list(xs), list(ys)
    if len(xs) < 2 or len(ys) < 2:
        raise DataError("two-sample t-test needs at least 2 observations per sample")
    mx, my = _mean(xs), _mean(ys)
    vx, vy = _sample_variance(xs, mx), _sample_variance(ys, my)
    nx, ny = len(xs), len(ys)
    se2 = vx / nx + vy / ny
    if se2 == 0.0:
        raise DataError("two-sample t-test undefined: both samples have zero variance")
    t = (mx - my) / math.sqrt(se2)
    df = se2 * se2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1))
    return TestResult(t, df, t_two_sided_p(t, df), mx - my)


def paired_ttest(xs, ys) -> TestResult:
    """One-sample t-test on the paired differences against zero."""
    xs, ys = list(xs), list(ys)
    if len(xs) != len(ys):
        raise DataError(f"paired samples differ in length: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise DataError("paired t-test needs at least 2 pairs")
    diffs = [x - y for x, y in zip(xs, ys)]
    mean = _mean(diffs)
    variance = _sample_variance(diffs, mean)
    if variance == 0.0:
        raise DataError("paired t-test undefined: differences have zero variance")
    n = len(diffs)
    t = mean / math.sqrt(variance / n)
    df = n - 1
    return TestResult(t, float(df), t_two_sided_p(t, df), mean)


def cohens_d(xs, ys) -> EffectSize:
    """(mean_x - mean_y) / pooled sd, pooled over df = nx + ny - 2."""
    xs, ys = list(xs), list(ys)
    if len(xs) < 2 or len(ys) < 2:
        raise DataError("Cohen's d needs at least 2 observations per sample")
    mx, my = _mean(xs), _mean(ys)
    vx, vy = _sample_variance(xs, mx), _sample_variance(ys, my)
    nx, ny = len(xs), len(ys)
    pooled = ((nx - 1) * vx + (ny - 1) * vy) / (nx + ny - 2)
    if pooled == 0.0:
        raise DataError("Cohen's d undefined for zero pooled variance")
    return EffectSize((mx - my) / math.sqrt(pooled))


# -- perturbation deltas --


@dataclass(frozen=True)
class DeltaReport:
    """Per-question and checklist-level (reference - perturbed) pass deltas."""

    perturbation_kind: str
    per_question_delta: dict[str, float]
    checklist_delta: float  # unweighted mean over questions
    n_notes: int

    @property
    def delta_sum(self) -> float:
        """Summed-over-questions delta (the alternative aggregation)."""
        return math.fsum(self.per_question_delta.values())


def perturbation_delta(
    ref_table: dict[str, dict[str, bool]],
    pert_table: dict[str, dict[str, bool]],
    kind: str = "",
) -> DeltaReport:
    """Mean over notes of (ref_pass - pert_pass), per question and overall."""
    if set(ref_table) != set(pert_table):
        raise DataError("reference and perturbed tables cover different questions")
    if not ref_table:
        raise DataError("empty pass tables")
    note_ids: set[str] | None = None
    per_question: dict[str, float] = {}
    for qid in sorted(ref_table):
        ref_notes, pert_notes = ref_table[qid], pert_table[qid]
        if set(ref_notes) != set(pert_notes):
            raise DataError(f"note sets differ for question {qid}")
        if note_ids is None:
            note_ids = set(ref_notes)
        elif set(ref_notes) != note_ids:
            raise DataError(f"question {qid} covers a different note set")
        if not ref_notes:
            raise DataError(f"no notes for question {qid}")
        deltas = [
            (1.0 if ref_notes[nid] else 0.0) - (1.0 if pert_notes[nid] else 0.0)
            for nid in sorted(ref_notes)
        ]
        per_question[qid] = math.fsum(deltas) / len(deltas)
    checklist_delta = math.fsum(per_question.values()) / len(per_question)
    assert note_ids is not None
    return DeltaReport(
        perturbation_kind=kind,
        per_question_delta=per_question,
        checklist_delta=checklist_delta,
        n_notes=len(note_ids),
    )


# -- predictive power (in-repo logistic regression) --


@dataclass(frozen=True)
class LogisticConfig:
    l2_grid: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    folds: int = 5
    train_fraction: float = 0.8
    seed: int = 0
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8


@dataclass(frozen=True)
class PredictiveReport:
    accuracy: float
    macro_f1: float
    weights: dict[str, float]
    intercept: float
    chosen_l2: float
    split_seed: int
    cv_folds: int
    n_train: int
    n_test: int


def logistic_loss_grad(
    weights: np.ndarray, X: np.ndarray, y: np.ndarray, reg: float
) -> tuple[float, np.ndarray]:
    """Mean NLL with L2 penalty (intercept w[0] unregularized), and its
    gradient. Public so tests can check the gradient by finite
    differences."""
    n = X.shape[0]
    z = X @ weights
    # log(1 + e^z) - y z, numerically stable
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    mask = np.ones_like(weights)
    mask[0] = 0.0
    loss += reg / (2.0 * n) * float(np.sum((weights * mask) ** 2))
    sigma = 1.0 / (1.0 + np.exp(-z))
    grad = X.T @ (sigma - y) / n + (reg / n) * weights * mask
    return loss, grad


def _fit_weights(X: np.ndarray, y: np.ndarray, reg: float, config: LogisticConfig) -> np.ndarray:
    """Zero-initialized gradient descent with Armijo backtracking."""
    weights = np.zeros(X.shape[1])
    for _ in range(config.max_iterations):
        loss, grad = logistic_loss_grad(weights, X, y, reg)
        grad_norm_sq = float(grad @ grad)
        if math.sqrt(grad_norm_sq) < config.gradient_tolerance:
            break
        step = 1.0
        while step > 1e-12:
            trial = weights - step * grad
            trial_loss, _ = logistic_loss_grad(trial, X, y, reg)
            if trial_loss <= loss - 1e-4 * step * grad_norm_sq:
                break
            step *= 0.5
        weights = weights - step * grad
    return weights


def _augment(features: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((features.shape[0], 1)), features])


def _predict(weights: np.ndarray, X: np.ndarray) -> np.ndarray:
    return (X @ weights >= 0.0).astype(float)  # threshold 0.5 on the sigmoid


def _accuracy(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    return float(np.mean(y_true == y_pred))


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean of per-class F1 over classes {0, 1}; 0/0 := 0."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    scores = []
    for cls in (0.0, 1.0):
        tp = float(np.sum((y_pred == cls) & (y_true == cls)))
        fp = float(np.sum((y_pred == cls) & (y_true != cls)))
        fn = float(np.sum((y_pred != cls) & (y_true == cls)))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        scores.append(f1)
    return float(np.mean(scores))


def _stratified_split(
    labels: np.ndarray, train_fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    rng = random.Random(seed)
    train: list[int] = []
    test: list[int] = []
    for cls in (0.0, 1.0):
        indices = [int(i) for i in np.flatnonzero(labels == cls)]
        if len(indices) < 2:
            raise DataError(
                f"class {int(cls)} has {len(indices)} example(s); need >= 2 for a split"
            )
        rng.shuffle(indices)
        n_train = int(round(train_fraction * len(indices)))
        n_train = max(1, min(len(indices) - 1, n_train))
        train.extend(indices[:n_train])
        test.extend(indices[n_train:])
    return sorted(train), sorted(test)


def _stratified_folds(labels: np.ndarray, indices: list[int], folds: int, seed: int) -> list[list[int]]:
    rng = random.Random(seed + 1)
    assignment: list[list[int]] = [[] for _ in range(folds)]
    for cls in (0.0, 1.0):
        members = [i for i in indices if labels[i] == cls]
        rng.shuffle(members)
        for position, index in enumerate(members):
            assignment[position % folds].append(index)
    return [sorted(fold) for fold in assignment]


def fit_logistic(
    features,
    labels,
    config: LogisticConfig = LogisticConfig(),
    feature_names: list[str] | None = None,
) -> PredictiveReport:
    """Train/evaluate the rating classifier on coverage-matrix features.

    The L2 strength comes from 5-fold cross-validation (mean accuracy)
    on the stratified train split; accuracy and macro F1 are measured on
    the held-out fraction at threshold 0.5. Deterministic for fixed
    (data, config).
    """
    X_raw = np.asarray(features, dtype=float)
    y = np.asarray([1.0 if bool(v) else 0.0 for v in labels], dtype=float)
    if X_raw.ndim != 2 or X_raw.shape[0] == 0 or X_raw.shape[1] == 0:
        raise DataError("feature matrix must be nonempty and 2-dimensional")
    if X_raw.shape[0] != y.shape[0]:
        raise DataError("feature and label counts differ")
    if len(set(y.tolist())) < 2:
        raise DataError("labels contain a single class")
    if feature_names is None:
        feature_names = [f"f{i}" for i in range(X_raw.shape[1])]
    if len(feature_names) != X_raw.shape[1]:
        raise DataError("feature_names length does not match feature count")

    train_idx, test_idx = _stratified_split(y, config.train_fraction, config.seed)
    folds = _stratified_folds(y, train_idx, config.folds, config.seed)
    X = _augment(X_raw)

    best_reg: float | None = None
    best_cv = -1.0
    for reg in sorted(config.l2_grid):
        fold_accuracies = []
        for held_out in folds:
            held_set = set(held_out)
            fit_idx = [i for i in train_idx if i not in held_set]
            if not fit_idx or not held_out:
                continue
            if len(set(y[fit_idx].tolist())) < 2:
                continue
            weights = _fit_weights(X[fit_idx], y[fit_idx], reg, config)
            fold_accuracies.append(_accuracy(y[held_out], _predict(weights, X[held_out])))
        cv = float(np.mean(fold_accuracies)) if fold_accuracies else 0.0
        if cv > best_cv:
            best_cv, best_reg = cv, reg
    assert best_reg is not None

    weights = _fit_weights(X[train_idx], y[train_idx], best_reg, config)
    predictions = _predict(weights, X[test_idx])
    return PredictiveReport(
        accuracy=_accuracy(y[test_idx], predictions),
        macro_f1=macro_f1(y[test_idx], predictions),
        weights={name: float(w) for name, w in zip(feature_names, weights[1:])},
        intercept=float(weights[0]),
        chosen_l2=best_reg,
        split_seed=config.seed,
        cv_folds=config.folds,
        n_train=len(train_idx),
        n_test=len(test_idx),
    )


# -- coverage-cluster distances --


@dataclass(frozen=True)
class ClusterDistanceReport:
    intra: float | None  # None when no question covers >= 2 feedback items
    inter: float | None  # None when < 2 questions cover anything


def cluster_distances(
    matrix: CoverageMatrix,
    feedback_vectors: dict[str, EmbeddingVector],
) -> ClusterDistanceReport:
    """Cosine-distance statistics of each question's covered feedback.

    intra: mean over questions (with >= 2 covered items) of the average
    pairwise distance within the covered set. inter: average distance
    between covered-set centroids over question pairs.
    """
    missing = [fid for fid in matrix.feedback_ids if fid not in feedback_vectors]
    if missing:
        raise DataError(f"missing embeddings for feedback ids {missing[:5]}")

    def distance(u: EmbeddingVector, v: EmbeddingVector) -> float:
        return 1.0 - cosine_similarity(u, v)

    intra_values = []
    centroids: list[np.ndarray] = []
    for qid in matrix.question_ids:
        covered = sorted(matrix.covered_set(qid))
        if not covered:
            continue
        vectors = [feedback_vectors[fid] for fid in covered]
        centroid = np.mean([v.values for v in vectors], axis=0)
        if not np.any(centroid):
            raise DataError(f"zero centroid for question {qid}")
        centroids.append(centroid)
        if len(covered) >= 2:
            pair_distances = [
                distance(vectors[i], vectors[j])
                for i in range(len(vectors))
                for j in range(i + 1, len(vectors))
            ]
            intra_values.append(math.fsum(pair_distances) / len(pair_distances))

    intra = math.fsum(intra_values) / len(intra_values) if intra_values else None
    if intra is None:
        logger.warning("intra-cluster distance undefined: no question covers >= 2 items")

    inter = None
    if len(centroids) >= 2:
        model = next(iter(feedback_vectors.values())).model_id
        pairs = [
            distance(
                EmbeddingVector(tuple(centroids[i]), model),
                EmbeddingVector(tuple(centroids[j]), model),
            )
            for i in range(len(centroids))
            for j in range(i + 1, len(centroids))
        ]
        inter = math.fsum(pairs) / len(pairs)
    return ClusterDistanceReport(intra=intra, inter=inter)


# -- preference agreement --


@dataclass(frozen=True)
class PreferenceReport:
    test: TestResult
    n_pairs: int
    n_excluded: int
    preferred_mean: float
    non_preferred_mean: float

    @property
    def significant(self) -> bool:
        return self.test.p_value <= 0.05


def preference_correlation(
    checklist: list[ChecklistQuestion],
    pairs: list[PreferencePair],
    judge: Judge,
) -> PreferenceReport:
    """Paired t-test of preferred vs non-preferred checklist scores.

    Pairs whose scoring hits judge errors are excluded (counted); a
    zero-variance difference surfaces as an error rather than a fake p.
    """
    if not pairs:
        raise DataError("no preference pairs")
    sections = {q.section for q in checklist}
    if len(sections) != 1:
        raise DataError("checklist spans multiple sections")
    section = next(iter(sections))
    mismatched = [p.id for p in pairs if p.section != section]
    if mismatched:
        raise DataError(f"pairs not in checklist section {section!r}: {mismatched[:5]}")
    preferred_scores: list[float] = []
    other_scores: list[float] = []
    excluded = 0
    for pair in pairs:
        score_a = judge.score_note(checklist, pair.transcript, pair.note_a, f"{pair.id}:a")
        score_b = judge.score_note(checklist, pair.transcript, pair.note_b, f"{pair.id}:b")
        if score_a.partial or score_b.partial:
            excluded += 1
            continue
        if pair.preferred == "a":
            preferred_scores.append(score_a.score)
            other_scores.append(score_b.score)
        else:
            preferred_scores.append(score_b.score)
            other_scores.append(score_a.score)
    if excluded:
        logger.warning("excluded %d preference pair(s) due to judge errors", excluded)
    if len(preferred_scores) < 2:
        raise DataError("fewer than 2 scoreable preference pairs")
    test = paired_ttest(preferred_scores, other_scores)
    return PreferenceReport(
        test=test,
        n_pairs=len(preferred_scores),
        n_excluded=excluded,
        preferred_mean=_mean(preferred_scores),
        non_preferred_mean=_mean(other_scores),
    )
