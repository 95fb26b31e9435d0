"""Evaluation tests: adapters, pair scoring, sensitivity drop, report rendering."""

import csv
import io
import json

import httpx
import pytest

from ctfkit.domain import CtfPair, Problem, SourceCode
from ctfkit.domain import TestCase as Case
from ctfkit.domain import TestSuite as Suite
from ctfkit.evaluation import (
    AdapterError,
    EvalReport,
    HttpModelAdapter,
    PairOutcome,
    ScriptedAdapter,
    evaluate_pairs,
    mimic_original_adapter,
    per_side_reference_adapter,
    render_report,
    sensitivity_drop,
)
from ctfkit.testkit import RunLimits

FAST = RunLimits(wall_time_s=5.0, memory_bytes=256 * 1024 * 1024, output_cap_bytes=64 * 1024)

SUM_BODY = "print(sum(int(x) for x in input().split()))"
PROD_BODY = (
    "import math\n"
    "print(math.prod(int(x) for x in input().split()))"
)


def py(body):
    return SourceCode(language_tag="python", body=body)


def stdin_suite(cases):
    return Suite(cases=tuple(Case(input=i, output=o, testtype="stdin") for i, o in cases), mode="stdin")


def make_pair(pid="sum-list", diverging=True):
    """Original sums its input; the counterfactual multiplies it.

    The shared inputs are chosen so one case agrees between the two
    behaviors (2+2 == 2*2) and the rest diverge.
    """
    original = Problem(
        id=pid,
        question_content="Read integers and print their sum.",
        tests=stdin_suite([("1 5\n", "6\n"), ("2 2\n", "4\n"), ("3 3\n", "6\n")]),
        solution=py(SUM_BODY),
    )
    ctf_body = PROD_BODY if diverging else SUM_BODY
    ctf_outputs = [("1 5\n", "5\n"), ("2 2\n", "4\n"), ("3 3\n", "9\n")] if diverging else [
        ("1 5\n", "6\n"), ("2 2\n", "4\n"), ("3 3\n", "6\n")
    ]
    ctf = Problem(
        id=f"{pid}#ctf0",
        question_content="Read integers and print their product.",
        tests=stdin_suite(ctf_outputs),
        solution=py(ctf_body),
    )
    pair = CtfPair(original=pid, ctf_problem=ctf, dq=0.05, ds=0.4, objective=0.34)
    return original, pair


class TestScriptedAdapter:
    def test_returns_program_by_problem_id(self):
        adapter = ScriptedAdapter("stub", {"p1": py("print(1)")})
        assert adapter.generate(Problem(id="p1", question_content="x")).body == "print(1)"

    def test_missing_program_is_adapter_error(self):
        adapter = ScriptedAdapter("stub", {})
        with pytest.raises(AdapterError, match="no program"):
            adapter.generate(Problem(id="p1", question_content="x"))


class TestEvaluatePairs:
    def test_each_side_judged_against_its_own_suite(self):
        original, pair = make_pair()
        adapter = ScriptedAdapter(
            "per-side", {original.id: py(SUM_BODY), pair.ctf_problem.id: py(PROD_BODY)}
        )
        report = evaluate_pairs(adapter, [pair], {original.id: original}, FAST)
        assert report.ori_acc == 1.0
        assert report.ctf_acc == 1.0
        assert report.drop == 0.0
        outcome = report.outcomes[0]
        assert outcome.ori_passed and outcome.ctf_passed and not outcome.errored

    def test_insensitive_adapter_fails_counterfactual_side(self):
        original, pair = make_pair()
        adapter = mimic_original_adapter([pair], {original.id: original})
        report = evaluate_pairs(adapter, [pair], {original.id: original}, FAST)
        assert report.model_id == "mimic-original"
        assert report.ori_acc == 1.0
        assert report.ctf_acc == 0.0
        assert report.drop == 1.0

    def test_reference_adapter_has_zero_drop(self):
        original, pair = make_pair()
        adapter = per_side_reference_adapter([pair], {original.id: original})
        report = evaluate_pairs(adapter, [pair], {original.id: original}, FAST)
        assert report.ori_acc == 1.0 and report.ctf_acc == 1.0 and report.drop == 0.0

    def test_adapter_failure_excluded_from_denominator(self):
        ori_a, pair_a = make_pair("alpha")
        ori_b, pair_b = make_pair("beta")
        originals = {ori_a.id: ori_a, ori_b.id: ori_b}
        # programs only for the alpha pair; beta errors out
        adapter = ScriptedAdapter(
            "partial", {ori_a.id: py(SUM_BODY), pair_a.ctf_problem.id: py(PROD_BODY)}
        )
        report = evaluate_pairs(adapter, [pair_a, pair_b], originals, FAST)
        assert report.total_pairs == 2
        assert report.errored_pairs == 1
        assert report.ori_acc == 1.0 and report.ctf_acc == 1.0
        errored = [o for o in report.outcomes if o.errored]
        assert len(errored) == 1
        assert errored[0].ctf_id == "beta#ctf0"
        assert "no program" in errored[0].error

    def test_all_errored_raises(self):
        original, pair = make_pair()
        with pytest.raises(ValueError, match="every pair errored"):
            evaluate_pairs(ScriptedAdapter("empty", {}), [pair], {original.id: original}, FAST)

    def test_no_pairs_raises(self):
        with pytest.raises(ValueError, match="at least one pair"):
            evaluate_pairs(ScriptedAdapter("empty", {}), [], {}, FAST)

    def test_unknown_original_raises(self):
        _, pair = make_pair()
        with pytest.raises(ValueError, match="unknown original"):
            evaluate_pairs(ScriptedAdapter("empty", {}), [pair], {}, FAST)

    def test_incomplete_suite_raises(self):
        original, pair = make_pair()
        hollow = Problem(
            id=pair.ctf_problem.id,
            question_content=pair.ctf_problem.question_content,
            tests=Suite(cases=(), mode="stdin"),
            solution=pair.ctf_problem.solution,
        )
        broken = CtfPair(original=original.id, ctf_problem=hollow, dq=0.05, ds=0.4, objective=0.34)
        with pytest.raises(ValueError, match="incomplete test suite"):
            evaluate_pairs(ScriptedAdapter("empty", {}), [broken], {original.id: original}, FAST)

    def test_divergence_lists_disagreeing_inputs(self):
        original, pair = make_pair()
        adapter = per_side_reference_adapter([pair], {original.id: original})
        report = evaluate_pairs(
            adapter, [pair], {original.id: original}, FAST, include_divergence=True
        )
        assert report.divergence_inputs == {"sum-list#ctf0": ["1 5\n", "3 3\n"]}

    def test_divergence_empty_for_identical_behavior(self):
        original, pair = make_pair(diverging=False)
        adapter = per_side_reference_adapter([pair], {original.id: original})
        report = evaluate_pairs(
            adapter, [pair], {original.id: original}, FAST, include_divergence=True
        )
        assert report.divergence_inputs == {"sum-list#ctf0": []}

    def test_divergence_omitted_by_default(self):
        original, pair = make_pair()
        adapter = per_side_reference_adapter([pair], {original.id: original})
        report = evaluate_pairs(adapter, [pair], {original.id: original}, FAST)
        assert report.divergence_inputs is None


class TestMimicAdapterConstruction:
    def test_requires_reference_solution(self):
        original, pair = make_pair()
        bare = Problem(id=original.id, question_content=original.question_content,
                       tests=original.tests)
        with pytest.raises(AdapterError, match="no reference solution"):
            mimic_original_adapter([pair], {original.id: bare})

    def test_reference_adapter_requires_both_solutions(self):
        original, pair = make_pair()
        hollow = Problem(
            id=pair.ctf_problem.id,
            question_content=pair.ctf_problem.question_content,
            tests=pair.ctf_problem.tests,
        )
        broken = CtfPair(original=original.id, ctf_problem=hollow, dq=0.05, ds=0.4, objective=0.34)
        with pytest.raises(AdapterError, match="missing a reference solution"):
            per_side_reference_adapter([broken], {original.id: original})


class TestHttpModelAdapter:
    def problem(self):
        return Problem(id="p1", question_content="print the answer", starter_code="def f():")

    def test_posts_prompt_and_wraps_completion(self, monkeypatch):
        calls = []

        def fake_post(url, json=None, headers=None, timeout=None):
            calls.append((url, json, headers))
            request = httpx.Request("POST", url)
            return httpx.Response(200, json={"completion": "print(42)"}, request=request)

        monkeypatch.setattr(httpx, "post", fake_post)
        monkeypatch.setenv("CTF_LLM_API_KEY", "k3y")
        adapter = HttpModelAdapter("https://models.invalid/v1", "tiny", backoff_base=0.0)
        program = adapter.generate(self.problem())
        assert program.body == "print(42)"
        assert program.language_tag == "python"
        url, payload, headers = calls[0]
        assert payload == {"model": "tiny", "prompt": "print the answer\n\nStarter code:\ndef f():"}
        assert headers["Authorization"] == "Bearer k3y"

    def test_retries_then_succeeds(self, monkeypatch):
        attempts = []

        def fake_post(url, json=None, headers=None, timeout=None):
            attempts.append(1)
            request = httpx.Request("POST", url)
            if len(attempts) < 3:
                return httpx.Response(500, request=request)
            return httpx.Response(200, json={"completion": "ok"}, request=request)

        monkeypatch.setattr(httpx, "post", fake_post)
        monkeypatch.setattr("time.sleep", lambda s: None)
        adapter = HttpModelAdapter("https://models.invalid/v1", "tiny", backoff_base=0.0)
        assert adapter.generate(self.problem()).body == "ok"
        assert len(attempts) == 3

    def test_gives_up_after_retries(self, monkeypatch):
        def fake_post(url, json=None, headers=None, timeout=None):
            request = httpx.Request("POST", url)
            return httpx.Response(502, request=request)

        monkeypatch.setattr(httpx, "post", fake_post)
        monkeypatch.setattr("time.sleep", lambda s: None)
        adapter = HttpModelAdapter("https://models.invalid/v1", "tiny", max_retries=1, backoff_base=0.0)
        with pytest.raises(AdapterError, match="after 2 attempts"):
            adapter.generate(self.problem())

    def test_missing_completion_field(self, monkeypatch):
        def fake_post(url, json=None, headers=None, timeout=None):
            request = httpx.Request("POST", url)
            return httpx.Response(200, json={"text": "nope"}, request=request)

        monkeypatch.setattr(httpx, "post", fake_post)
        monkeypatch.setattr("time.sleep", lambda s: None)
        adapter = HttpModelAdapter("https://models.invalid/v1", "tiny", max_retries=0)
        with pytest.raises(AdapterError, match="completion"):
            adapter.generate(self.problem())


def sample_reports():
    outcome = PairOutcome(original_id="p1", ctf_id="p1#ctf0", ori_passed=True, ctf_passed=False)
    return [
        EvalReport(
            model_id="mimic-original",
            total_pairs=5,
            errored_pairs=1,
            ori_acc=1.0,
            ctf_acc=0.25,
            drop=0.75,
            outcomes=(outcome,),
        ),
        EvalReport(
            model_id="reference",
            total_pairs=5,
            errored_pairs=0,
            ori_acc=1.0,
            ctf_acc=1.0,
            drop=0.0,
            outcomes=(),
            divergence_inputs={"p1#ctf0": ["1 5\n"]},
        ),
    ]


class TestRenderReport:
    def test_sensitivity_drop_sign(self):
        assert sensitivity_drop(0.9, 0.2) == pytest.approx(0.7)
        assert sensitivity_drop(0.5, 0.8) == pytest.approx(-0.3)

    def test_table_layout(self):
        text = render_report(sample_reports(), fmt="table")
        lines = text.splitlines()
        assert lines[0].split() == ["model", "ori", "ctf", "drop", "pairs", "err"]
        assert set(lines[1]) == {"-"}
        assert "mimic-original" in lines[2]
        assert "+0.750" in lines[2]
        assert "+0.000" in lines[3]
        assert text.endswith("\n")

    def test_csv_round_trips(self):
        text = render_report(sample_reports(), fmt="csv")
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["model", "ori_acc", "ctf_acc", "drop", "pairs", "errored"]
        assert rows[1] == ["mimic-original", "1.000000", "0.250000", "+0.750000", "5", "1"]
        assert rows[2][0] == "reference" and rows[2][3] == "+0.000000"

    def test_json_round_trips(self):
        text = render_report(sample_reports(), fmt="json")
        parsed = [EvalReport.from_json(obj) for obj in json.loads(text)]
        assert parsed == sample_reports()

    def test_unknown_format(self):
        with pytest.raises(ValueError, match="unknown report format"):
            render_report([], fmt="yaml")
