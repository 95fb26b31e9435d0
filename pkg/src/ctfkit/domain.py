"""Core record types and corpus IO.

Everything downstream (metrics, perturbation, annotation, evaluation,
selection) operates on the types defined here. Records are immutable;
stages produce new records instead of mutating old ones. Corpus files
are UTF-8 line-delimited JSON, one record per line.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
import unicodedata
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Iterator

STDIN = "stdin"
FUNCTIONAL = "functional"

ORIGIN_BASE = "base"
ORIGIN_SENSITIVITY = "sensitivity"

_WS_RUN = re.compile(r"\s+")


class CorpusError(ValueError):
    """Raised on malformed corpus files or invalid records.

    Carries enough context (path, line) to name the offending record.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where = f" [{where}]"
        super().__init__(f"{message}{where}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class TestCase:
    input: str
    output: str
    testtype: str = STDIN


@dataclass(frozen=True)
class TestSuite:
    cases: tuple[TestCase, ...]
    mode: str = STDIN

    def __post_init__(self) -> None:
        if self.mode not in (STDIN, FUNCTIONAL):
            raise ValueError(f"unknown suite mode {self.mode!r}")

    def inputs(self) -> list[str]:
        return [c.input for c in self.cases]


@dataclass(frozen=True)
class SourceCode:
    language_tag: str
    body: str


@dataclass(frozen=True)
class Problem:
    """A problem tuple: description, starter code, test suite, reference solution."""

    id: str
    question_content: str
    starter_code: str = ""
    tests: TestSuite = field(default_factory=lambda: TestSuite(cases=()))
    solution: SourceCode | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("problem id must be a non-empty string")
        if not self.question_content.strip():
            raise ValueError(f"problem {self.id!r}: question_content must be non-empty")


@dataclass(frozen=True)
class CandidateVariant:
    """One sampled rewrite of a problem description, pre-annotation."""

    id: str
    parent_id: str
    question_content: str
    starter_code: str = ""
    generator: str = ""  # provenance, e.g. "scripted:3"
    dq: float | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("candidate id must be non-empty")
        if not self.parent_id:
            raise ValueError(f"candidate {self.id!r}: parent_id must be non-empty")
        if not self.question_content.strip():
            raise ValueError(f"candidate {self.id!r}: question_content must be non-empty")


@dataclass(frozen=True)
class CtfPair:
    """An accepted original/counterfactual pairing.

    ``original`` holds the original problem's id; the full original record
    lives in the source corpus. ``objective`` is ds - lambda * dq at the
    parameters in force when the pair was selected.
    """

    original: str
    ctf_problem: Problem
    dq: float
    ds: float
    objective: float


@dataclass(frozen=True)
class InstructRecord:
    """One instruction-tuning sample."""

    id: str
    instruction: str
    output: str = ""
    origin: str = ORIGIN_BASE
    embedding: tuple[float, ...] | None = None
    difficulty: int | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("instruct record id must be non-empty")
        if self.origin not in (ORIGIN_BASE, ORIGIN_SENSITIVITY):
            raise ValueError(f"record {self.id!r}: unknown origin {self.origin!r}")
        if self.difficulty is not None and not (1 <= self.difficulty <= 5):
            raise ValueError(f"record {self.id!r}: difficulty must be in 1..5")


# === text normalization and content keys ===

def normalize_text(text: str) -> str:
    """NFC-normalize and collapse whitespace runs to single spaces."""
    return _WS_RUN.sub(" ", unicodedata.normalize("NFC", text)).strip()


def normalized_for_key(text: str) -> str:
    """Normalization used for content addressing: NFC, lowercase,
    punctuation stripped, whitespace collapsed."""
    text = unicodedata.normalize("NFC", text).lower()
    text = "".join(c for c in text if not unicodedata.category(c).startswith("P"))
    return _WS_RUN.sub(" ", text).strip()


def text_content_key(text: str) -> str:
    """Stable hex digest of the normalized text. Same across runs and platforms."""
    return hashlib.sha256(normalized_for_key(text).encode("utf-8")).hexdigest()


def content_key(record: Problem | CandidateVariant | InstructRecord | str) -> str:
    """Content key of a record's primary text (description or instruction)."""
    if isinstance(record, str):
        return text_content_key(record)
    if isinstance(record, InstructRecord):
        return text_content_key(record.instruction)
    return text_content_key(record.question_content)


def derive_ctf_id(parent_id: str, k: int) -> str:
    """Id for the k-th record derived from ``parent_id``."""
    return f"{parent_id}#ctf{k}"


def seed_id(record_id: str) -> str:
    """The originating id for a derived record ('p1#ctf2' -> 'p1')."""
    return record_id.split("#", 1)[0]


# === JSON (de)serialization ===
# Field names follow the corpus convention: question_content, starter_code,
# public_test_cases, metadata. public_test_cases may appear either as a JSON
# list or as a JSON-encoded string containing that list; both are accepted on
# load, and saves always emit the list form.

def _suite_to_json(suite: TestSuite) -> list[dict[str, str]]:
    return [{"input": c.input, "output": c.output, "testtype": c.testtype} for c in suite.cases]


def _suite_from_json(raw: Any, where: str) -> TestSuite:
    if isinstance(raw, str):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{where}: public_test_cases string is not valid JSON: {exc}") from None
    if not isinstance(raw, list):
        raise ValueError(f"{where}: public_test_cases must be a list")
    cases = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "input" not in item or "output" not in item:
            raise ValueError(f"{where}: test case {i} must have input and output fields")
        cases.append(
            TestCase(
                input=str(item["input"]),
                output=str(item["output"]),
                testtype=str(item.get("testtype", STDIN)),
            )
        )
    mode = FUNCTIONAL if cases and all(c.testtype == FUNCTIONAL for c in cases) else STDIN
    return TestSuite(cases=tuple(cases), mode=mode)


def problem_to_json(p: Problem) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": p.id,
        "question_content": p.question_content,
        "starter_code": p.starter_code,
        "public_test_cases": _suite_to_json(p.tests),
        "metadata": p.metadata,
    }
    if p.solution is not None:
        obj["solution"] = {"language_tag": p.solution.language_tag, "body": p.solution.body}
    return obj


def problem_from_json(obj: dict[str, Any], where: str = "problem") -> Problem:
    for name in ("id", "question_content"):
        if name not in obj:
            raise ValueError(f"{where}: missing required field {name!r}")
    suite = _suite_from_json(obj.get("public_test_cases", []), where)
    if not suite.cases:
        raise ValueError(f"{where} (id={obj['id']!r}): public_test_cases must contain at least one case")
    solution = None
    if obj.get("solution") is not None:
        s = obj["solution"]
        if not isinstance(s, dict) or "body" not in s:
            raise ValueError(f"{where} (id={obj['id']!r}): solution must have a body")
        solution = SourceCode(language_tag=str(s.get("language_tag", "python")), body=str(s["body"]))
    return Problem(
        id=str(obj["id"]),
        question_content=str(obj["question_content"]),
        starter_code=str(obj.get("starter_code", "")),
        tests=suite,
        solution=solution,
        metadata=dict(obj.get("metadata", {})),
    )


def candidate_to_json(c: CandidateVariant) -> dict[str, Any]:
    return {
        "id": c.id,
        "parent_id": c.parent_id,
        "question_content": c.question_content,
        "starter_code": c.starter_code,
        "generator": c.generator,
        "dq": c.dq,
        "metadata": c.metadata,
    }


def candidate_from_json(obj: dict[str, Any], where: str = "candidate") -> CandidateVariant:
    for name in ("id", "parent_id", "question_content"):
        if name not in obj:
            raise ValueError(f"{where}: missing required field {name!r}")
    return CandidateVariant(
        id=str(obj["id"]),
        parent_id=str(obj["parent_id"]),
        question_content=str(obj["question_content"]),
        starter_code=str(obj.get("starter_code", "")),
        generator=str(obj.get("generator", "")),
        dq=None if obj.get("dq") is None else float(obj["dq"]),
        metadata=dict(obj.get("metadata", {})),
    )


def pair_to_json(p: CtfPair) -> dict[str, Any]:
    return {
        "original": p.original,
        "ctf_problem": problem_to_json(p.ctf_problem),
        "dq": p.dq,
        "ds": p.ds,
        "objective": p.objective,
    }


def pair_from_json(obj: dict[str, Any], where: str = "pair") -> CtfPair:
    for name in ("original", "ctf_problem", "dq", "ds", "objective"):
        if name not in obj:
            raise ValueError(f"{where}: missing required field {name!r}")
    return CtfPair(
        original=str(obj["original"]),
        ctf_problem=problem_from_json(obj["ctf_problem"], where=f"{where}.ctf_problem"),
        dq=float(obj["dq"]),
        ds=float(obj["ds"]),
        objective=float(obj["objective"]),
    )


def instruct_to_json(r: InstructRecord) -> dict[str, Any]:
    return {
        "id": r.id,
        "instruction": r.instruction,
        "output": r.output,
        "origin": r.origin,
        "embedding": None if r.embedding is None else list(r.embedding),
        "difficulty": r.difficulty,
    }


def instruct_from_json(obj: dict[str, Any], where: str = "instruct") -> InstructRecord:
    for name in ("id", "instruction"):
        if name not in obj:
            raise ValueError(f"{where}: missing required field {name!r}")
    emb = obj.get("embedding")
    return InstructRecord(
        id=str(obj["id"]),
        instruction=str(obj["instruction"]),
        output=str(obj.get("output", "")),
        origin=str(obj.get("origin", ORIGIN_BASE)),
        embedding=None if emb is None else tuple(float(x) for x in emb),
        difficulty=None if obj.get("difficulty") is None else int(obj["difficulty"]),
    )


_SCHEMAS = {
    "problem": (problem_from_json, problem_to_json, Problem),
    "candidate": (candidate_from_json, candidate_to_json, CandidateVariant),
    "pair": (pair_from_json, pair_to_json, CtfPair),
    "instruct": (instruct_from_json, instruct_to_json, InstructRecord),
}


def _record_id(record: Any) -> str:
    return record.original + "/" + record.ctf_problem.id if isinstance(record, CtfPair) else record.id


def load_corpus(path: str | os.PathLike[str], schema: str) -> list[Any]:
    """Load a line-delimited JSON corpus, validating each record.

    Raises CorpusError naming the path and line on malformed JSON, missing
    fields, or duplicate ids.
    """
    if schema not in _SCHEMAS:
        raise ValueError(f"unknown corpus schema {schema!r}; expected one of {sorted(_SCHEMAS)}")
    from_json = _SCHEMAS[schema][0]
    records: list[Any] = []
    seen_ids: set[str] = set()
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"invalid JSON: {exc}", path=path, line=lineno) from None
            try:
                record = from_json(obj, where=schema)
            except ValueError as exc:
                raise CorpusError(str(exc), path=path, line=lineno) from None
            rid = _record_id(record)
            if rid in seen_ids:
                raise CorpusError(f"duplicate id {rid!r}", path=path, line=lineno)
            seen_ids.add(rid)
            records.append(record)
    return records


def iter_corpus(path: str | os.PathLike[str], schema: str) -> Iterator[Any]:
    """Streaming variant of load_corpus (no duplicate-id check)."""
    from_json = _SCHEMAS[schema][0]
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield from_json(json.loads(line), where=schema)
            except (ValueError, json.JSONDecodeError) as exc:
                raise CorpusError(str(exc), path=path, line=lineno) from None


def dumps_record(record: Any) -> str:
    """Canonical single-line JSON for a record. Stable across runs."""
    for from_json, to_json, cls in _SCHEMAS.values():
        if isinstance(record, cls):
            return json.dumps(to_json(record), ensure_ascii=False, separators=(",", ":"))
    raise TypeError(f"cannot serialize {type(record).__name__}")


def save_corpus(records: Iterable[Any], path: str | os.PathLike[str]) -> int:
    """Write records to a line-delimited JSON file.

    Streams: records may be any iterable and are written one at a time, so
    peak memory stays flat regardless of corpus size. The file appears
    atomically (written to a temp file, then renamed), so readers never see
    a partially written corpus. Returns the number of records written.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    count = 0
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".corpus-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            for record in records:
                fh.write(dumps_record(record))
                fh.write("\n")
                count += 1
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return count


def with_dq(candidate: CandidateVariant, dq: float) -> CandidateVariant:
    return replace(candidate, dq=dq)
