import json
import math
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctfkit.domain import CandidateVariant, Problem, normalize_text
from ctfkit.domain import TestCase as Case
from ctfkit.domain import TestSuite as Suite
from ctfkit.metrics import (
    DEFAULT_EPSILON,
    DEFAULT_LAMBDA,
    ObjectiveParams,
    cosine_distance,
    ctf_objective,
    epsilon_filter,
    levenshtein,
    normalized_levenshtein,
    percentile_report,
)


def reference_levenshtein(a: str, b: str) -> int:
    """Textbook full-matrix DP, kept independent of the implementation."""
    rows, cols = len(a) + 1, len(b) + 1
    table = [[0] * cols for _ in range(rows)]
    for i in range(rows):
        table[i][0] = i
    for j in range(cols):
        table[0][j] = j
    for i in range(1, rows):
        for j in range(1, cols):
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + (a[i - 1] != b[j - 1]),
            )
    return table[-1][-1]


class TestLevenshtein:
    def test_classic_pairs(self):
        assert levenshtein("kitten", "sitting") == 3
        assert levenshtein("flaw", "lawn") == 2
        assert levenshtein("", "abc") == 3
        assert levenshtein("abc", "") == 3
        assert levenshtein("", "") == 0
        assert levenshtein("same", "same") == 0

    def test_long_strings_hit_the_vectorized_path(self):
        # strings beyond the small-input cutoff run through the numpy rows
        a = "abcdefghij" * 10
        b = "abcdefghix" * 10
        assert levenshtein(a, b) == reference_levenshtein(a, b)

    def test_non_ascii(self):
        assert levenshtein("café", "cafe") == 1
        assert levenshtein("αβγ", "αγ") == 1

    @given(st.text(max_size=60), st.text(max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_agrees_with_reference(self, a, b):
        assert levenshtein(a, b) == reference_levenshtein(a, b)

    @given(st.text(max_size=80), st.text(max_size=80))
    @settings(max_examples=100, deadline=None)
    def test_symmetry(self, a, b):
        assert levenshtein(a, b) == levenshtein(b, a)

    @given(st.text(max_size=80))
    @settings(max_examples=50, deadline=None)
    def test_identity(self, a):
        assert levenshtein(a, a) == 0

    @given(st.text(max_size=50), st.text(max_size=50))
    @settings(max_examples=100, deadline=None)
    def test_bounds(self, a, b):
        d = levenshtein(a, b)
        assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))


class TestNormalizedLevenshtein:
    def test_whitespace_runs_do_not_count(self):
        assert normalized_levenshtein("a   b", "a b") == 0.0
        assert normalized_levenshtein("x\n\ny", "x y") == 0.0

    def test_both_empty(self):
        assert normalized_levenshtein("", "") == 0.0
        assert normalized_levenshtein("  ", "\t") == 0.0

    def test_completely_different(self):
        assert normalized_levenshtein("aaaa", "bbbb") == 1.0

    def test_exact_value(self):
        # normalized "kitten" vs "sitting": 3 edits over length 7
        assert normalized_levenshtein("kitten", "sitting") == 3 / 7

    @given(st.text(max_size=80), st.text(max_size=80))
    @settings(max_examples=100, deadline=None)
    def test_range_and_symmetry(self, a, b):
        d = normalized_levenshtein(a, b)
        assert 0.0 <= d <= 1.0
        assert d == normalized_levenshtein(b, a)

    def test_matches_frozen_oracle_sample(self, fixtures_dir):
        with open(os.path.join(fixtures_dir, "levenshtein_oracle.json")) as fh:
            fixture = json.load(fh)
        for entry in fixture["pairs"][::50]:
            assert normalized_levenshtein(entry["a"], entry["b"]) == entry["ratio"]


class TestCosineDistance:
    def test_identical_is_zero(self):
        assert cosine_distance((1.0, 2.0), (1.0, 2.0)) == pytest.approx(0.0)

    def test_orthogonal_is_one(self):
        assert cosine_distance((1.0, 0.0), (0.0, 1.0)) == pytest.approx(1.0)

    def test_opposite_is_two(self):
        assert cosine_distance((1.0, 0.0), (-1.0, 0.0)) == pytest.approx(2.0)

    def test_forty_five_degrees(self):
        assert cosine_distance((1.0, 0.0), (1.0, 1.0)) == pytest.approx(1 - 1 / math.sqrt(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            cosine_distance((1.0,), (1.0, 0.0))

    def test_zero_vector(self):
        with pytest.raises(ValueError, match="zero"):
            cosine_distance((0.0, 0.0), (1.0, 0.0))

    @given(
        st.lists(st.floats(-10, 10).map(lambda x: 0.0 if abs(x) < 1e-3 else x),
                 min_size=3, max_size=3),
        st.lists(st.floats(-10, 10).map(lambda x: 0.0 if abs(x) < 1e-3 else x),
                 min_size=3, max_size=3),
    )
    @settings(max_examples=100, deadline=None)
    def test_range(self, a, b):
        if not any(a) or not any(b):
            return
        assert 0.0 <= cosine_distance(a, b) <= 2.0 + 1e-12


class TestObjective:
    def test_defaults(self):
        assert DEFAULT_EPSILON == 0.13
        assert DEFAULT_LAMBDA == 1.2

    def test_linear_tradeoff(self):
        assert ctf_objective(ds=0.5, dq=0.1) == pytest.approx(0.5 - 1.2 * 0.1)

    def test_custom_params(self):
        params = ObjectiveParams(epsilon=0.2, lambda_=2.0)
        assert ctf_objective(ds=1.0, dq=0.25, params=params) == pytest.approx(0.5)

    def test_json_uses_lambda_key(self):
        params = ObjectiveParams(epsilon=0.1, lambda_=0.7)
        blob = params.to_json()
        assert blob == {"epsilon": 0.1, "lambda": 0.7}
        assert ObjectiveParams.from_json(blob) == params

    def test_json_defaults(self):
        assert ObjectiveParams.from_json({}) == ObjectiveParams(
            epsilon=DEFAULT_EPSILON, lambda_=DEFAULT_LAMBDA
        )


def make_parent(
    pid="parent",
    text=(
        "Long original description of the task to be solved here, padded with "
        "enough detail that a one-word tweak stays well within the edit budget."
    ),
):
    return Problem(
        id=pid,
        question_content=text,
        tests=Suite(cases=(Case(input="1\n", output="1\n", testtype="stdin"),), mode="stdin"),
    )


def make_candidate(cid, parent, text):
    return CandidateVariant(id=cid, parent_id=parent.id, question_content=text)


class TestEpsilonFilter:
    def test_keeps_within_budget_and_annotates_dq(self):
        parent = make_parent()
        near = make_candidate("c1", parent, parent.question_content + " Tweaked.")
        far = make_candidate("c2", parent, "Entirely unrelated text about another problem.")
        kept = epsilon_filter([near, far], parent)
        assert [c.id for c in kept] == ["c1"]
        assert kept[0].dq == normalized_levenshtein(
            parent.question_content, near.question_content
        )

    def test_boundary_is_inclusive(self):
        parent = make_parent(text="abcdefghij" * 10)
        variant_text = parent.question_content[:-13] + "x" * 13
        dq = normalized_levenshtein(parent.question_content, variant_text)
        candidate = make_candidate("edge", parent, variant_text)
        params = ObjectiveParams(epsilon=dq, lambda_=DEFAULT_LAMBDA)
        kept = epsilon_filter([candidate], parent, params)
        assert [c.id for c in kept] == ["edge"]
        assert kept[0].dq == params.epsilon

    def test_epsilon_zero_keeps_only_identical_text(self):
        parent = make_parent()
        same = make_candidate("same", parent, parent.question_content + "   ")
        diff = make_candidate("diff", parent, parent.question_content + " More.")
        params = ObjectiveParams(epsilon=0.0, lambda_=DEFAULT_LAMBDA)
        kept = epsilon_filter([same, diff], parent, params)
        assert [c.id for c in kept] == ["same"]

    def test_rejects_foreign_parent(self):
        parent = make_parent("a")
        stray = CandidateVariant(id="s", parent_id="b", question_content="text")
        with pytest.raises(ValueError, match="parent"):
            epsilon_filter([stray], parent)

    def test_preserves_order_and_originals(self):
        parent = make_parent()
        cands = [
            make_candidate(f"c{i}", parent, parent.question_content + "." * i)
            for i in range(4)
        ]
        kept = epsilon_filter(cands, parent)
        assert [c.id for c in kept] == ["c0", "c1", "c2", "c3"]
        assert all(c.dq is None for c in cands)  # inputs untouched

    def test_monotone_in_epsilon(self):
        parent = make_parent(text="abcdefghijklmnopqrstuvwxyz" * 4)
        cands = [
            make_candidate(f"c{i}", parent, parent.question_content[: 104 - 4 * i] + "z" * (4 * i))
            for i in range(8)
        ]
        previous: list[str] = []
        for eps in (0.0, 0.05, 0.1, 0.2, 0.5, 1.0):
            kept = [
                c.id
                for c in epsilon_filter(cands, parent, ObjectiveParams(eps, DEFAULT_LAMBDA))
            ]
            assert set(previous) <= set(kept)
            previous = kept


class TestPercentiles:
    def test_one_to_hundred_ascending(self):
        report = percentile_report(list(range(1, 101)))
        assert report.percentiles == {25: 25.0, 50: 50.0, 75: 75.0, 95: 95.0}

    def test_one_to_hundred_descending(self):
        report = percentile_report(list(range(1, 101)), descending=True)
        assert report.percentiles == {25: 76.0, 50: 51.0, 75: 26.0, 95: 6.0}

    def test_nearest_rank_rounds_up(self):
        # n=3: ranks ceil(.25*3)=1, ceil(.5*3)=2, ceil(.75*3)=3, ceil(.95*3)=3
        report = percentile_report([10.0, 20.0, 30.0])
        assert report.percentiles == {25: 10.0, 50: 20.0, 75: 30.0, 95: 30.0}

    def test_single_value(self):
        report = percentile_report([7.0])
        assert set(report.percentiles.values()) == {7.0}

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            percentile_report([])

    def test_input_order_is_irrelevant(self):
        values = [5.0, 1.0, 4.0, 2.0, 3.0]
        assert (
            percentile_report(values).percentiles
            == percentile_report(sorted(values)).percentiles
        )

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=50))
    @settings(max_examples=100, deadline=None)
    def test_values_come_from_input(self, values):
        report = percentile_report(values)
        for v in report.percentiles.values():
            assert v in values


class TestNormalizeInteraction:
    @given(st.text(max_size=60))
    @settings(max_examples=50, deadline=None)
    def test_distance_to_normalized_self_is_zero(self, text):
        assert normalized_levenshtein(text, normalize_text(text)) == 0.0
