from __future__ import annotations

import math
import random

import numpy as np
import pytest

from conftest import make_provider
from notecheck.corpus import PreferencePair
from notecheck.distill import make_question
from notecheck.errors import DataError
from notecheck.evalstats import (
    LogisticConfig,
    cluster_distances,
    cohens_d,
    fit_logistic,
    logistic_loss_grad,
    macro_f1,
    one_sample_ttest,
    paired_ttest,
    perturbation_delta,
    preference_correlation,
    regularized_incomplete_beta,
    t_two_sided_p,
    two_sample_ttest,
)
from notecheck.judge import Judge
from notecheck.prompts import PromptLibrary
from notecheck.provider import EmbeddingVector
from notecheck.selection import CoverageMatrix

PROMPTS = PromptLibrary()

# Frozen oracle values: computed once with an independent statistics
# package (one-sample/Welch/paired t-tests and pooled-sd Cohen's d on the
# datasets below) and pinned here as literals.
FROZEN = [
    {
        "xs": [2.149253, 1.207516, 0.493294, 1.014969, 0.619087, 1.53184],
        "ys": [0.5818, -0.89922, 1.522628, 2.011344, 2.235622, 0.955342, -0.245357, 4.512701, 0.644808, 1.051696, 0.817636],
        "mu0": 0.5,
        "one_t": 2.6760645175264988, "one_p": 0.044027241119680226,
        "welch_t": -0.059778436839015056, "welch_p": 0.9531434540801678, "welch_df": 14.585689729527518,
        "paired_t": 0.1614773901759424, "paired_p": 0.8780395643872503,
        "cohens_d": -0.024446675853306978,
    },
    {
        "xs": [2.250677, 0.650073, 2.115739, 2.859325, 0.027265, 0.546712, 1.159619, 3.303824, 2.273294, 1.749392, 1.394025, 2.073566],
        "ys": [0.517483, 3.496286, 1.912051, 3.198417, -1.115862, -0.032566, -0.302627, 0.525354, 2.591747, 0.484843, 4.030131, -0.549982, 0.573238],
        "mu0": 0.5,
        "one_t": 4.260020285821999, "one_p": 0.0013429613188464774,
        "welch_t": 0.9584497711732396, "welch_p": 0.34953893454010043, "welch_df": 19.55189487712703,
        "paired_t": 0.9058905234792743, "paired_p": 0.38440729353618575,
        "cohens_d": 0.37586409629871254,
    },
    {
        "xs": [1.241509, 1.205278, 0.434005, 1.996851, 1.583036, 0.186879, 1.839616, 2.805279, 0.767647, 3.335381, -0.042744, 2.307458, 2.043305, 3.970117, -0.832751],
        "ys": [-1.773399, 0.980362, 1.740245, 2.649855, 0.840619],
        "mu0": 0.5,
        "one_t": 3.034452062319835, "one_p": 0.008920785752067477,
        "welch_t": 0.7819761140189692, "welch_p": 0.4651195482980306, "welch_df": 5.765490208771384,
        "paired_t": 0.545422549388701, "paired_p": 0.6144518585735214,
        "cohens_d": 0.45696134768150787,
    },
    {
        "xs": [1.023823, 0.474359, 1.706595, 1.209141, 1.308517, 0.535346, 0.673326, 2.911458],
        "ys": [1.688243, -0.528214, 0.153244, -0.459011, -1.096589],
        "mu0": 0.5,
        "one_t": 2.585834938924108, "one_p": 0.03616353684996719,
        "welch_t": 2.306186194192403, "welch_p": 0.05547609868340742, "welch_df": 6.815418789612489,
        "paired_t": 2.3149738526959758, "paired_p": 0.08158544469995302,
        "cohens_d": 1.4120977898615632,
    },
    {
        "xs": [2.573548, 0.89744, 4.34984, 2.751108, 4.552369, 4.161329, 1.370565, 1.908597],
        "ys": [3.354505, 0.157838, -2.417589, 2.789252, 1.394366, -0.049304, 1.346341],
        "mu0": 0.5,
        "one_t": 4.668976617716272, "one_p": 0.002290241735539754,
        "welch_t": 2.1268435815737607, "welch_p": 0.05725752352540272, "welch_df": 10.836975379257607,
        "paired_t": 1.9151259583641245, "paired_p": 0.10396636608699743,
        "cohens_d": 1.1255190050432748,
    },
    {
        "xs": [3.351825, 4.906778, 2.379404, 1.796446, 0.637527, 3.583298],
        "ys": [-0.844201, -1.037691, 0.116108, -1.135112, 1.514724, 0.387629, 3.387803, 1.398093, 1.03111, 1.02208, -0.923846],
        "mu0": 0.5,
        "one_t": 3.722556143098566, "one_p": 0.013675879327940564,
        "welch_t": 3.1313189937157277, "welch_p": 0.01089730818787976, "welch_df": 9.819795526731454,
        "paired_t": 3.1790106991486446, "paired_p": 0.024565440858526372,
        "cohens_d": 1.6214448486209845,
    },
    {
        "xs": [3.084147, 2.74141, 5.694356, 2.702823, 5.636029, 2.169319, 1.095948, 0.810936, 4.359098, 4.672491],
        "ys": [1.620841, 1.03906, 1.224331, 3.815364, 0.16251, -0.857857, 0.660449, 1.431109, 2.221978, 0.820467, -2.718177, -1.32467, -2.771406],
        "mu0": 0.5,
        "one_t": 5.083219307084766, "one_p": 0.0006599534840732075,
        "welch_t": 3.7909050665524546, "welch_p": 0.0011240844915195317, "welch_df": 20.279289430520933,
        "paired_t": 3.049708674988704, "paired_p": 0.013799406353886644,
        "cohens_d": 1.5756603342909619,
    },
    {
        "xs": [6.613095, 4.357511, 1.915111, 2.338287, 5.077698, 1.365236, 3.663546, 5.912994, 4.270479, 3.358759],
        "ys": [-0.335011, 2.421093, 1.789696, -4.055323, 2.181069, 0.672625],
        "mu0": 0.5,
        "one_t": 6.266333476440559, "one_p": 0.000146746619694948,
        "welch_t": 3.0417151432079033, "welch_p": 0.016007961042947563, "welch_df": 8.005731184484846,
        "paired_t": 2.6859097012109863, "paired_p": 0.04351113797989059,
        "cohens_d": 1.7217467082914122,
    },
    {
        "xs": [5.461347, 5.886012, 2.400413, 6.031788, 5.488581, 4.143283, 6.857936, 3.737947, 6.223609, 2.689811, 2.248218, 1.478167, 2.778091],
        "ys": [-0.099094, 0.245115, 0.443166, -0.065332, 0.348601, -0.084265, 0.61385, -1.234033, 1.034819],
        "mu0": 0.5,
        "one_t": 7.4761072304181875, "one_p": 7.468969153689708e-06,
        "welch_t": 7.5655073767529775, "welch_p": 1.2018051495766996e-06, "welch_df": 15.856448832058744,
        "paired_t": 11.60277697371214, "paired_p": 2.769660961377584e-06,
        "cohens_d": 2.8250334712548413,
    },
    {
        "xs": [2.026862, 5.864444, 4.150876, 6.84689, 3.854992, -0.195891, 4.447751, 3.958806, 6.77508, 4.400757, 1.039952, 3.498234, 7.114875, 3.280559],
        "ys": [0.383341, -0.321279, 1.35758, 0.468025, -0.258296, -0.813793, 3.487072, 0.237049, 0.815919, 1.430976, 0.220986, 0.289538],
        "mu0": 0.5,
        "one_t": 6.210572188359875, "one_p": 3.164882149137268e-05,
        "welch_t": 5.257633816550848, "welch_p": 3.7685648747617146e-05, "welch_df": 20.073346511521137,
        "paired_t": 5.460670965010473, "paired_p": 0.000197622365613167,
        "cohens_d": 1.9748825573107596,
    },
]


class TestFrozenOracles:
    @pytest.mark.parametrize("case", FROZEN, ids=[f"dataset{i}" for i in range(len(FROZEN))])
    def test_one_sample(self, case):
        result = one_sample_ttest(case["xs"], case["mu0"])
        assert abs(result.statistic - case["one_t"]) < 1e-9
        assert abs(result.p_value - case["one_p"]) < 1e-9
        assert result.degrees_of_freedom == len(case["xs"]) - 1

    @pytest.mark.parametrize("case", FROZEN, ids=[f"dataset{i}" for i in range(len(FROZEN))])
    def test_welch(self, case):
        result = two_sample_ttest(case["xs"], case["ys"])
        assert abs(result.statistic - case["welch_t"]) < 1e-9
        assert abs(result.p_value - case["welch_p"]) < 1e-9
        assert abs(result.degrees_of_freedom - case["welch_df"]) < 1e-9

    @pytest.mark.parametrize("case", FROZEN, ids=[f"dataset{i}" for i in range(len(FROZEN))])
    def test_paired(self, case):
        k = min(len(case["xs"]), len(case["ys"]))
        result = paired_ttest(case["xs"][:k], case["ys"][:k])
        assert abs(result.statistic - case["paired_t"]) < 1e-9
        assert abs(result.p_value - case["paired_p"]) < 1e-9

    @pytest.mark.parametrize("case", FROZEN, ids=[f"dataset{i}" for i in range(len(FROZEN))])
    def test_cohens_d(self, case):
        effect = cohens_d(case["xs"], case["ys"])
        assert abs(effect.cohens_d - case["cohens_d"]) < 1e-9


class TestTTestEdges:
    def test_symmetric_data_gives_t_zero_p_one_exactly(self):
        result = one_sample_ttest([1, 2, 3, 4, 5], 3)
        assert result.statistic == 0.0
        assert result.p_value == 1.0

    def test_equal_samples_give_t_zero_p_one(self):
        xs = [1.0, 2.5, 4.0]
        result = two_sample_ttest(xs, list(xs))
        assert result.statistic == 0.0 and result.p_value == 1.0

    def test_differences_symmetric_about_zero(self):
        result = paired_ttest([1.0, 2.0, 3.0], [2.0, 1.0, 3.0])
        assert result.statistic == 0.0 and result.p_value == 1.0

    def test_zero_variance_one_sample(self):
        with pytest.raises(DataError, match="zero-variance"):
            one_sample_ttest([2, 2, 2], 0)

    def test_zero_variance_both_samples_welch(self):
        with pytest.raises(DataError, match="zero variance"):
            two_sample_ttest([1, 1, 1], [2, 2])

    def test_one_zero_variance_sample_is_fine(self):
        result = two_sample_ttest([1, 1, 1], [2.0, 3.0])
        assert result.statistic < 0

    def test_identical_paired_samples_error_not_nan(self):
        xs = [0.4, 0.6, 0.8]
        with pytest.raises(DataError, match="zero variance"):
            paired_ttest(xs, list(xs))

    def test_short_samples_rejected(self):
        with pytest.raises(DataError):
            one_sample_ttest([1.0], 0)
        with pytest.raises(DataError):
            two_sample_ttest([1.0], [1.0, 2.0])
        with pytest.raises(DataError):
            paired_ttest([1.0, 2.0], [1.0])

    def test_sign_flips_when_roles_swap(self):
        xs, ys = [3.0, 4.0, 5.5], [1.0, 2.0, 0.5]
        forward = two_sample_ttest(xs, ys)
        backward = two_sample_ttest(ys, xs)
        assert abs(forward.statistic + backward.statistic) < 1e-12
        assert abs(forward.p_value - backward.p_value) < 1e-12
        fp = paired_ttest(xs, ys)
        bp = paired_ttest(ys, xs)
        assert abs(fp.statistic + bp.statistic) < 1e-12

    def test_p_values_always_in_unit_interval(self):
        rng = random.Random(3)
        for _ in range(50):
            xs = [rng.gauss(0, 1) for _ in range(rng.randint(2, 20))]
            ys = [rng.gauss(0.3, 2) for _ in range(rng.randint(2, 20))]
            for result in (
                one_sample_ttest(xs, 0.1),
                two_sample_ttest(xs, ys),
                paired_ttest(xs[: min(len(xs), len(ys))], ys[: min(len(xs), len(ys))]),
            ):
                assert 0.0 <= result.p_value <= 1.0

    def test_synthetic_109_pair_design(self):
        # preferred-minus-other differences with mean .05, sd .10 at n=109
        n = 109
        base = [math.sin(i * 0.7) for i in range(n)]
        mean = sum(base) / n
        sd = math.sqrt(sum((b - mean) ** 2 for b in base) / (n - 1))
        diffs = [0.05 + 0.10 * (b - mean) / sd for b in base]
        result = paired_ttest(diffs, [0.0] * n)
        expected_t = 0.05 / (0.10 / math.sqrt(n))
        assert abs(result.statistic - expected_t) < 1e-9
        assert result.p_value < 0.001


class TestIncompleteBeta:
    def test_bounds_and_edges(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0

    def test_symmetric_half(self):
        # I_{1/2}(a, a) = 1/2 exactly for symmetric beta
        for a in (0.5, 1.0, 2.5, 7.0):
            assert abs(regularized_incomplete_beta(a, a, 0.5) - 0.5) < 1e-12

    def test_uniform_case_is_identity(self):
        for x in (0.1, 0.35, 0.8):
            assert abs(regularized_incomplete_beta(1.0, 1.0, x) - x) < 1e-12

    def test_t_cdf_consistency_with_large_df_normal(self):
        # t with huge df approaches the normal: P(|T| >= 1.96) ~ 0.05
        assert abs(t_two_sided_p(1.959963985, 10_000_000) - 0.05) < 1e-4


class TestCohensD:
    def test_equal_means_give_zero(self):
        assert cohens_d([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]).cohens_d == 0.0

    def test_shift_by_pooled_sd_gives_one(self):
        xs = [1.0, 2.0, 3.0, 4.0]
        mean = sum(xs) / len(xs)
        sd = math.sqrt(sum((x - mean) ** 2 for x in xs) / (len(xs) - 1))
        ys = [x + sd for x in xs]
        assert abs(cohens_d(ys, xs).cohens_d - 1.0) < 1e-12

    def test_scale_invariance(self):
        xs = [1.0, 2.0, 4.0]
        ys = [0.5, 1.5, 2.0]
        base = cohens_d(xs, ys).cohens_d
        scaled = cohens_d([10 * x for x in xs], [10 * y for y in ys]).cohens_d
        assert abs(base - scaled) < 1e-12

    def test_zero_pooled_variance_rejected(self):
        with pytest.raises(DataError, match="pooled"):
            cohens_d([1.0, 1.0], [1.0, 1.0])


class TestPerturbationDelta:
    def _table(self, value, qs=("qa", "qb"), notes=("n1", "n2", "n3")):
        return {q: {n: value for n in notes} for q in qs}

    def test_identical_tables_give_zero(self):
        report = perturbation_delta(self._table(True), self._table(True), "k")
        assert report.checklist_delta == 0.0
        assert all(v == 0.0 for v in report.per_question_delta.values())

    def test_all_pass_to_all_fail_gives_one(self):
        report = perturbation_delta(self._table(True), self._table(False), "k")
        assert report.checklist_delta == 1.0
        assert report.delta_sum == 2.0  # summed over the two questions

    def test_constant_point_eight_gives_point_two(self):
        ref = {"qa": {f"n{i}": True for i in range(10)}}
        pert = {"qa": {f"n{i}": i < 8 for i in range(10)}}
        report = perturbation_delta(ref, pert, "k")
        assert abs(report.checklist_delta - 0.2) < 1e-12

    def test_antisymmetry(self):
        rng = random.Random(8)
        ref = {q: {f"n{i}": rng.random() < 0.7 for i in range(12)} for q in ("qa", "qb", "qc")}
        pert = {q: {n: rng.random() < 0.4 for n in ref[q]} for q in ref}
        forward = perturbation_delta(ref, pert, "k")
        backward = perturbation_delta(pert, ref, "k")
        for q in forward.per_question_delta:
            assert abs(forward.per_question_delta[q] + backward.per_question_delta[q]) < 1e-12
        assert abs(forward.checklist_delta + backward.checklist_delta) < 1e-12

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DataError, match="different questions"):
            perturbation_delta(self._table(True), self._table(True, qs=("qa",)), "k")
        with pytest.raises(DataError, match="note sets"):
            perturbation_delta(
                self._table(True), self._table(True, notes=("n1", "n2")), "k"
            )


class TestLogistic:
    def _separable(self, n=40, seed=0):
        rng = random.Random(seed)
        features, labels = [], []
        for _ in range(n):
            label = rng.random() < 0.5
            features.append([1.0 if label else 0.0, rng.random()])
            labels.append(label)
        return features, labels

    def test_separable_data_scores_perfectly(self):
        features, labels = self._separable()
        report = fit_logistic(features, labels, LogisticConfig(seed=1))
        assert report.accuracy == 1.0
        assert report.macro_f1 == 1.0

    def test_uninformative_features_fall_back_to_majority(self):
        labels = [i < 30 for i in range(40)]  # 30 positive, 10 negative
        features = [[0.0, 0.0] for _ in range(40)]
        report = fit_logistic(features, labels, LogisticConfig(seed=2))
        # stratified 20% test split holds 6 positives and 2 negatives, so a
        # constant positive prediction scores the majority-class rate 6/8
        assert report.n_test == 8
        assert abs(report.accuracy - 0.75) < 1e-12

    def test_gradient_matches_central_finite_differences(self):
        rng = random.Random(123)
        for _ in range(20):
            n, d = rng.randint(4, 12), rng.randint(1, 4)
            X = np.array([[rng.gauss(0, 1) for _ in range(d + 1)] for _ in range(n)])
            X[:, 0] = 1.0
            y = np.array([float(rng.random() < 0.5) for _ in range(n)])
            w = np.array([rng.gauss(0, 1) for _ in range(d + 1)])
            reg = rng.choice([0.01, 0.1, 1.0])
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

    def test_deterministic_weights_across_runs(self):
        features, labels = self._separable(seed=9)
        reports = [fit_logistic(features, labels, LogisticConfig(seed=5)) for _ in range(3)]
        assert reports[0].weights == reports[1].weights == reports[2].weights
        assert reports[0].accuracy == reports[2].accuracy

    def test_single_class_rejected(self):
        with pytest.raises(DataError, match="single class"):
            fit_logistic([[1.0], [0.0]], [True, True])

    def test_empty_matrix_rejected(self):
        with pytest.raises(DataError, match="nonempty"):
            fit_logistic([], [])

    def test_macro_f1_zero_convention(self):
        # no predicted positives: positive-class F1 is 0, not NaN
        assert macro_f1([1, 1, 0, 0], [0, 0, 0, 0]) == pytest.approx(1 / 3)


def unit_vec(axis, dim=4):
    values = [0.0] * dim
    values[axis] = 1.0
    return EmbeddingVector(tuple(values), "m")


class TestClusterDistances:
    def _matrix(self, covered_sets, m):
        return CoverageMatrix(
            question_ids=tuple(f"q{i}" for i in range(len(covered_sets))),
            feedback_ids=tuple(f"f{j}" for j in range(m)),
            cells=tuple(tuple(j in s for j in range(m)) for s in covered_sets),
        )

    def test_identical_embeddings_give_zero_distances(self):
        matrix = self._matrix([{0, 1}, {2, 3}], 4)
        vectors = {f"f{j}": unit_vec(0) for j in range(4)}
        report = cluster_distances(matrix, vectors)
        assert abs(report.intra) < 1e-12
        assert abs(report.inter) < 1e-12

    def test_orthogonal_centroids_give_inter_one(self):
        matrix = self._matrix([{0}, {1}], 2)
        vectors = {"f0": unit_vec(0), "f1": unit_vec(1)}
        report = cluster_distances(matrix, vectors)
        assert report.intra is None  # no question covers two items
        assert abs(report.inter - 1.0) < 1e-12

    def test_matches_brute_force_oracle(self):
        rng = random.Random(17)
        m, dim = 10, 6
        covered_sets = [set(rng.sample(range(m), rng.randint(2, 5))) for _ in range(4)]
        matrix = self._matrix(covered_sets, m)
        vectors = {}
        for j in range(m):
            raw = [rng.gauss(0, 1) for _ in range(dim)]
            vectors[f"f{j}"] = EmbeddingVector(tuple(raw), "m")

        def cos(u, v):
            dot = sum(a * b for a, b in zip(u, v))
            nu = math.sqrt(sum(a * a for a in u))
            nv = math.sqrt(sum(b * b for b in v))
            return dot / (nu / 1.0 * nv)

        intra_per_question = []
        centroids = []
        for s in covered_sets:
            members = [vectors[f"f{j}"].values for j in sorted(s)]
            pair_distances = []
            for i in range(len(members)):
                for j in range(i + 1, len(members)):
                    pair_distances.append(1 - cos(members[i], members[j]))
            if pair_distances:
                intra_per_question.append(sum(pair_distances) / len(pair_distances))
            centroids.append([sum(col) / len(members) for col in zip(*members)])
        expected_intra = sum(intra_per_question) / len(intra_per_question)
        inter_pairs = []
        for i in range(len(centroids)):
            for j in range(i + 1, len(centroids)):
                inter_pairs.append(1 - cos(centroids[i], centroids[j]))
        expected_inter = sum(inter_pairs) / len(inter_pairs)
        report = cluster_distances(matrix, vectors)
        assert abs(report.intra - expected_intra) < 1e-12
        assert abs(report.inter - expected_inter) < 1e-12

    def test_rotation_invariance(self):
        matrix = self._matrix([{0, 1}, {1, 2}], 3)
        rng = random.Random(23)
        base = {f"f{j}": [rng.gauss(0, 1) for _ in range(2)] for j in range(3)}
        theta = 0.7
        rotated = {
            k: [
                v[0] * math.cos(theta) - v[1] * math.sin(theta),
                v[0] * math.sin(theta) + v[1] * math.cos(theta),
            ]
            for k, v in base.items()
        }
        first = cluster_distances(matrix, {k: EmbeddingVector(tuple(v), "m") for k, v in base.items()})
        second = cluster_distances(matrix, {k: EmbeddingVector(tuple(v), "m") for k, v in rotated.items()})
        assert abs(first.intra - second.intra) < 1e-9
        assert abs(first.inter - second.inter) < 1e-9

    def test_missing_embedding_rejected(self):
        matrix = self._matrix([{0}], 1)
        with pytest.raises(DataError, match="missing embeddings"):
            cluster_distances(matrix, {})


class TestPreferenceCorrelation:
    def _pairs(self, n=6):
        return [
            PreferencePair(
                id=f"p{i}", transcript=f"Visit {i}.",
                note_a=f"Good plan {i}. Extra detail {i}.",
                note_b=f"Bad plan {i}.",
                section="assessment_and_plan", preferred="a",
            )
            for i in range(n)
        ]

    def _judge(self, default):
        provider, _, _ = make_provider(default=default)
        return Judge(provider, PROMPTS)

    def test_judge_favoring_preferred_gives_positive_difference(self):
        def scripted(request):
            section = request.user.split("):\n", 1)[1].split("\n\nQuestion:", 1)[0]
            if "Good plan" in section:
                return "Yes"
            # one question passes on bad notes depending on parity, for variance
            visit = int(section.split("Bad plan ", 1)[1].split(".", 1)[0])
            asked = request.user.rsplit("Question: ", 1)[1]
            return "Yes" if (visit % 3 == 0 and "point 0" in asked) else "No"

        checklist = [
            make_question(f"Is quality point {i} satisfied?", "assessment_and_plan", "feedback")
            for i in range(4)
        ]
        judge = self._judge(scripted)
        report = preference_correlation(checklist, self._pairs(), judge)
        assert report.test.mean_difference > 0
        assert report.n_pairs == 6 and report.n_excluded == 0
        assert report.significant

    def test_identical_scores_surface_zero_variance_error(self):
        checklist = [make_question("Is it fine?", "assessment_and_plan", "feedback")]
        judge = self._judge("Yes")
        with pytest.raises(DataError, match="zero variance"):
            preference_correlation(checklist, self._pairs(), judge)

    def test_section_mismatch_rejected(self):
        checklist = [make_question("Is it fine?", "subjective", "feedback")]
        with pytest.raises(DataError, match="not in checklist section"):
            preference_correlation(checklist, self._pairs(), self._judge("Yes"))

    def test_empty_pairs_rejected(self):
        checklist = [make_question("Is it fine?", "assessment_and_plan", "feedback")]
        with pytest.raises(DataError, match="no preference"):
            preference_correlation(checklist, [], self._judge("Yes"))
