import json
import os

import pytest

from ctfkit.domain import (
    CandidateVariant,
    CorpusError,
    CtfPair,
    InstructRecord,
    Problem,
    SourceCode,
    content_key,
    derive_ctf_id,
    dumps_record,
    instruct_from_json,
    iter_corpus,
    load_corpus,
    normalize_text,
    normalized_for_key,
    pair_from_json,
    pair_to_json,
    problem_from_json,
    problem_to_json,
    save_corpus,
    seed_id,
    text_content_key,
)
from ctfkit.domain import TestCase as Case
from ctfkit.domain import TestSuite as Suite


def make_problem(pid="p1", question="Print the sum of two integers.", solution=True):
    return Problem(
        id=pid,
        question_content=question,
        starter_code="",
        tests=Suite(cases=(Case(input="1 2\n", output="3\n", testtype="stdin"),), mode="stdin"),
        solution=SourceCode(language_tag="python", body="print(3)\n") if solution else None,
        metadata={"source": "unit"},
    )


class TestNormalization:
    def test_collapses_whitespace_runs(self):
        assert normalize_text("a \t b\n\nc") == "a b c"

    def test_strips_ends(self):
        assert normalize_text("  padded  ") == "padded"

    def test_nfc_composition(self):
        decomposed = "étude"
        composed = "étude"
        assert normalize_text(decomposed) == normalize_text(composed)

    def test_key_normalization_drops_punctuation_and_case(self):
        assert normalized_for_key("Hello, World!") == normalized_for_key("hello world")

    def test_content_key_is_sha256_hex(self):
        key = text_content_key("anything")
        assert len(key) == 64
        int(key, 16)

    def test_content_key_dispatch(self):
        p = make_problem(question="Some text.")
        assert content_key(p) == text_content_key("Some text.")
        assert content_key("Some text.") == text_content_key("Some text.")


class TestIds:
    def test_derive_and_recover(self):
        assert derive_ctf_id("prob-9", 2) == "prob-9#ctf2"
        assert seed_id("prob-9#ctf2") == "prob-9"

    def test_seed_id_of_underived(self):
        assert seed_id("plain") == "plain"


class TestProblemJson:
    def test_round_trip(self):
        p = make_problem()
        assert problem_from_json(problem_to_json(p)) == p

    def test_string_encoded_test_cases(self):
        # corpora in the wild carry public_test_cases as a JSON-encoded string
        cases = [{"input": "abc\n", "output": "YES\n", "testtype": "stdin"}]
        obj = {
            "id": "swap-1",
            "question_content": "Can one swap sort it?",
            "starter_code": "",
            "public_test_cases": json.dumps(cases),
            "metadata": {},
        }
        p = problem_from_json(obj)
        assert p.tests.cases[0].input == "abc\n"
        assert p.tests.cases[0].output == "YES\n"
        # saving always emits the list form
        assert isinstance(problem_to_json(p)["public_test_cases"], list)

    def test_requires_cases(self):
        obj = {"id": "x", "question_content": "q", "public_test_cases": []}
        with pytest.raises(ValueError, match="at least one case"):
            problem_from_json(obj)

    def test_empty_question_rejected(self):
        with pytest.raises(ValueError):
            make_problem(question="  ")

    def test_functional_mode_detection(self):
        cases = [{"input": "[1, 2]", "output": "3", "testtype": "functional"}]
        p = problem_from_json(
            {"id": "f", "question_content": "q", "public_test_cases": cases}
        )
        assert p.tests.mode == "functional"

    def test_mixed_modes_fall_back_to_stdin(self):
        cases = [
            {"input": "[1]", "output": "1", "testtype": "functional"},
            {"input": "1\n", "output": "1\n", "testtype": "stdin"},
        ]
        p = problem_from_json(
            {"id": "m", "question_content": "q", "public_test_cases": cases}
        )
        assert p.tests.mode == "stdin"


class TestPairJson:
    def test_round_trip(self):
        ctf = Problem(
            id="p1#ctf0",
            question_content="Print the product of two integers.",
            starter_code="",
            tests=Suite(cases=(Case(input="1 2\n", output="2\n", testtype="stdin"),), mode="stdin"),
            solution=SourceCode(language_tag="python", body="print(2)\n"),
            metadata={"candidate_id": "p1#cand-a-0"},
        )
        pair = CtfPair(original="p1", ctf_problem=ctf, dq=0.05, ds=0.4, objective=0.34)
        assert pair_from_json(pair_to_json(pair)) == pair


class TestInstructJson:
    def test_defaults(self):
        r = instruct_from_json({"id": "i1", "instruction": "do the thing"})
        assert r.origin == "base"
        assert r.embedding is None
        assert r.difficulty is None

    def test_embedding_round_trip(self):
        r = InstructRecord(
            id="i2", instruction="x", output="y", origin="sensitivity",
            embedding=(0.5, 0.5), difficulty=4,
        )
        back = instruct_from_json(json.loads(dumps_record(r)))
        assert back == r


class TestCorpusIo:
    def test_load_save_round_trip(self, tmp_path):
        problems = [make_problem(f"p{i}") for i in range(3)]
        path = tmp_path / "c.jsonl"
        assert save_corpus(problems, path) == 3
        assert load_corpus(path, "problem") == problems

    def test_duplicate_id_detection(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        line = dumps_record(make_problem("same"))
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(CorpusError, match="duplicate id 'same'") as exc:
            load_corpus(path, "problem")
        assert exc.value.line == 2

    def test_malformed_json_names_the_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(dumps_record(make_problem()) + "\n{not json\n")
        with pytest.raises(CorpusError) as exc:
            load_corpus(path, "problem")
        assert exc.value.line == 2
        assert str(path) in str(exc.value)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "blank.jsonl"
        path.write_text("\n" + dumps_record(make_problem()) + "\n\n")
        assert len(load_corpus(path, "problem")) == 1

    def test_unknown_schema(self, tmp_path):
        with pytest.raises(ValueError, match="unknown corpus schema"):
            load_corpus(tmp_path / "x.jsonl", "nope")

    def test_save_streams_from_generator(self, tmp_path):
        def generate():
            for i in range(500):
                yield InstructRecord(id=f"g{i}", instruction=f"inst {i}", output="", origin="base")

        path = tmp_path / "stream.jsonl"
        assert save_corpus(generate(), path) == 500
        assert sum(1 for _ in iter_corpus(path, "instruct")) == 500

    def test_save_is_atomic_on_failure(self, tmp_path):
        path = tmp_path / "atomic.jsonl"
        save_corpus([make_problem("keep")], path)

        def exploding():
            yield make_problem("new")
            raise RuntimeError("mid-write failure")

        with pytest.raises(RuntimeError):
            save_corpus(exploding(), path)
        # prior contents survive and no temp litter remains
        assert [p.id for p in load_corpus(path, "problem")] == ["keep"]
        assert [f for f in os.listdir(tmp_path) if f.startswith(".corpus-")] == []

    def test_pair_corpus_keys_on_both_ids(self, tmp_path):
        ctf = make_problem("p1#ctf0")
        pair = CtfPair(original="p1", ctf_problem=ctf, dq=0.0, ds=0.0, objective=0.0)
        other = CtfPair(original="p2", ctf_problem=make_problem("p1#ctf0"), dq=0.0, ds=0.0, objective=0.0)
        path = tmp_path / "pairs.jsonl"
        save_corpus([pair, other], path)
        assert len(load_corpus(path, "pair")) == 2
