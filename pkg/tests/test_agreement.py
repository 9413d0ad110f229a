import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from guideqa.agreement import (
    DegenerateMatrix,
    RaterMatrix,
    UndefinedCoefficient,
    WeightScheme,
    facet_agreement,
    facet_rows_to_csv,
    gwet_ac1_unweighted,
    gwet_ac2,
    median_low,
    weighted_kappa,
)
from guideqa.corpus import QAPair
from guideqa.judge import ScoreRecord


def matrix(rows, raters=None, q=5):
    raters = raters or [f"r{j}" for j in range(len(rows[0]))]
    return RaterMatrix(
        items=[f"i{k}" for k in range(len(rows))],
        raters=raters,
        ratings=[list(r) for r in rows],
        q=q,
    )


# Hand-computed oracle (exact fraction arithmetic, linear weights, q=5):
# items [1,2,1], [3,3,3], [5,4,4], [2,2,3] with 3 raters.
#   pa = (5/6 + 1 + 5/6 + 5/6)/4 = 7/8
#   prevalence = (1/6, 1/4, 1/3, 1/6, 1/12); sum pi(1-pi) = 55/72
#   T_w = 15, pe = (15/20)*(55/72) = 55/96
#   AC2 = (7/8 - 55/96)/(1 - 55/96) = 29/41
HAND_MATRIX = [[1, 2, 1], [3, 3, 3], [5, 4, 4], [2, 2, 3]]
HAND_AC2 = 29 / 41

# Two-rater weighted kappa oracle on [(1,2),(3,3),(4,5),(2,2)]:
#   observed disagreement = (1/4 + 0 + 1/4 + 0)/4 = 1/8
#   chance = (1/4)(.5 + .25 + .25 + .375) = 11/32
#   kappa = 1 - (1/8)/(11/32) = 7/11
HAND_KAPPA_MATRIX = [[1, 2], [3, 3], [4, 5], [2, 2]]
HAND_KAPPA = 7 / 11


class TestWeightScheme:
    def test_linear_values(self):
        w = WeightScheme.linear(5)
        assert w.matrix[0, 0] == 1.0
        assert w.matrix[0, 4] == 0.0
        assert math.isclose(w.matrix[1, 3], 0.5)
        assert np.allclose(w.matrix, w.matrix.T)

    def test_identity(self):
        assert np.array_equal(WeightScheme.identity(4).matrix, np.eye(4))

    def test_quadratic_bounds(self):
        w = WeightScheme.quadratic(5)
        assert w.matrix.min() >= 0.0 and w.matrix.max() <= 1.0


class TestGwetAc2:
    def test_perfect_agreement_spread_categories(self):
        m = matrix([[1, 1, 1], [4, 4, 4], [2, 2, 2], [5, 5, 5], [3, 3, 3]])
        assert math.isclose(gwet_ac2(m, WeightScheme.linear(5)), 1.0, abs_tol=1e-12)

    def test_concentrated_single_category(self):
        m = matrix([[3, 3, 3], [3, 3, 3]])
        assert math.isclose(gwet_ac2(m, WeightScheme.linear(5)), 1.0, abs_tol=1e-12)

    def test_hand_computed_example(self):
        value = gwet_ac2(matrix(HAND_MATRIX), WeightScheme.linear(5))
        assert math.isclose(value, HAND_AC2, abs_tol=1e-9)

    def test_missing_ratings_allowed(self):
        m = matrix([[1, 1, None], [2, None, 2], [4, 4, 4], [5, None, None]])
        value = gwet_ac2(m, WeightScheme.linear(5))
        assert value <= 1.0

    def test_degenerate_matrix(self):
        m = matrix([[1, None, None], [2, None, None]])
        with pytest.raises(DegenerateMatrix):
            gwet_ac2(m)

    def test_identity_weights_reduce_to_ac1(self):
        rng = random.Random(11)
        for _ in range(1000):
            n_items = rng.randint(2, 12)
            n_raters = rng.randint(2, 5)
            rows = [[rng.randint(1, 5) for _ in range(n_raters)] for _ in range(n_items)]
            m = matrix(rows)
            try:
                weighted = gwet_ac2(m, WeightScheme.identity(5))
                plain = gwet_ac1_unweighted(m)
            except UndefinedCoefficient:
                continue
            assert math.isclose(weighted, plain, abs_tol=1e-12)

    def test_invariant_under_row_and_column_permutation(self):
        rng = random.Random(5)
        rows = [[rng.randint(1, 5) for _ in range(3)] for _ in range(8)]
        base = gwet_ac2(matrix(rows))
        shuffled_rows = rows[::-1]
        assert math.isclose(gwet_ac2(matrix(shuffled_rows)), base, abs_tol=1e-12)
        permuted_cols = [[r[2], r[0], r[1]] for r in rows]
        assert math.isclose(gwet_ac2(matrix(permuted_cols)), base, abs_tol=1e-12)

    @given(
        st.lists(
            st.lists(st.integers(1, 5), min_size=3, max_size=3),
            min_size=2,
            max_size=15,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_bounded_above_by_one(self, rows):
        try:
            value = gwet_ac2(matrix(rows))
        except UndefinedCoefficient:
            return
        assert value <= 1.0 + 1e-12


class TestWeightedKappa:
    def test_identical_columns(self):
        m = matrix([[1, 1], [4, 4], [3, 3], [5, 5]])
        assert math.isclose(weighted_kappa(m), 1.0, abs_tol=1e-12)

    def test_hand_computed_example(self):
        value = weighted_kappa(matrix(HAND_KAPPA_MATRIX), WeightScheme.linear(5))
        assert math.isclose(value, HAND_KAPPA, abs_tol=1e-9)

    def test_independent_uniform_near_zero(self):
        rng = random.Random(42)
        rows = [[rng.randint(1, 5), rng.randint(1, 5)] for _ in range(10_000)]
        value = weighted_kappa(matrix(rows))
        assert abs(value) < 0.05

    def test_requires_two_raters(self):
        with pytest.raises(DegenerateMatrix):
            weighted_kappa(matrix([[1, 2, 3]]))

    def test_requires_complete_ratings(self):
        with pytest.raises(DegenerateMatrix):
            weighted_kappa(matrix([[1, None], [2, 2]]))

    def test_constant_columns_undefined(self):
        with pytest.raises(UndefinedCoefficient):
            weighted_kappa(matrix([[3, 3], [3, 3]]))


class TestMedianLow:
    def test_odd(self):
        assert median_low([5, 1, 3]) == 3

    def test_even_takes_lower(self):
        assert median_low([2, 3]) == 2
        assert median_low([1, 5, 5, 2]) == 2


def human_record(pair_id, rater, score, metric="q_fluency"):
    return ScoreRecord(pair_id=pair_id, metric=metric, rater_id=rater, rater_kind="human", score=score)


def llm_record(pair_id, judge, score, metric="q_fluency"):
    return ScoreRecord(pair_id=pair_id, metric=metric, rater_id=judge, rater_kind="llm", score=score)


def pair_of(pair_id, language="en", pipeline="single"):
    return QAPair(
        pair_id=pair_id,
        video_id="vid01",
        language=language,
        pipeline=pipeline,
        question="Q?",
        answer="A.",
    )


class TestFacetAgreement:
    def test_identical_humans_give_one(self):
        records = []
        for item in range(6):
            score = (item % 5) + 1
            for rater in ("h1", "h2", "h3"):
                records.append(human_record(f"p{item}", rater, score))
        rows = facet_agreement(records, ["metric"], "human_human")
        assert len(rows) == 1
        assert math.isclose(rows[0]["ac2"], 1.0, abs_tol=1e-12)

    def test_judge_matching_median_gives_one(self):
        records = []
        pairs = {}
        for item in range(6):
            base = (item % 4) + 1
            scores = [base, base + 1, base]  # lower median = base
            for rater, score in zip(("h1", "h2", "h3"), scores):
                records.append(human_record(f"p{item}", rater, score))
            records.append(llm_record(f"p{item}", "judge-a", base))
            pairs[f"p{item}"] = pair_of(f"p{item}")
        rows = facet_agreement(records, ["metric"], "llm_vs_human", pairs)
        assert len(rows) == 1
        assert rows[0]["judge"] == "judge-a"
        assert math.isclose(rows[0]["ac2"], 1.0, abs_tol=1e-12)
        assert math.isclose(rows[0]["weighted_kappa"], 1.0, abs_tol=1e-12)

    def test_constant_cell_reports_ac2_with_undefined_kappa(self):
        records = []
        pairs = {}
        for item in range(4):
            for rater in ("h1", "h2", "h3"):
                records.append(human_record(f"p{item}", rater, 3))
            records.append(llm_record(f"p{item}", "judge-a", 3))
            pairs[f"p{item}"] = pair_of(f"p{item}")
        rows = facet_agreement(records, ["metric"], "llm_vs_human", pairs)
        assert len(rows) == 1
        assert math.isclose(rows[0]["ac2"], 1.0, abs_tol=1e-12)
        assert rows[0]["weighted_kappa"] is None

    def test_facet_labels_enumerate_present_cells(self):
        records = []
        pairs = {}
        n = 0
        for language in ("en", "zh"):
            for metric in ("q_fluency", "a_clarity"):
                for item in range(3):
                    n += 1
                    pid = f"{language}-{metric}-{item}"
                    pairs[pid] = pair_of(pid, language=language)
                    for rater, score in zip(("h1", "h2", "h3"), (2, 2, 3 + (item % 2))):
                        records.append(human_record(pid, rater, score, metric=metric))
        rows = facet_agreement(records, ["metric", "language"], "human_human", pairs)
        cells = {(r["metric"], r["language"]) for r in rows}
        assert cells == {
            ("q_fluency", "en"),
            ("q_fluency", "zh"),
            ("a_clarity", "en"),
            ("a_clarity", "zh"),
        }

    def test_csv_emission(self):
        records = [human_record(f"p{i}", r, 4) for i in range(4) for r in ("h1", "h2")]
        rows = facet_agreement(records, ["metric"], "human_human")
        csv_text = facet_rows_to_csv(rows, ["metric"])
        header, line = csv_text.strip().split("\n")
        assert header == "metric,judge,n_items,ac2,weighted_kappa"
        assert line.startswith("q_fluency,")
        assert ",1.000," in line
