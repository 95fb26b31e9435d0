"""Model evaluation over original/counterfactual pairs.

Each pair is scored under a single greedy completion per side: the adapter
produces one program for the original problem (judged only against the
original suite) and one for the counterfactual problem (judged only against
the reconstructed suite). Accuracy is the fraction of non-errored pairs whose
generation passes every case; the sensitivity drop is original accuracy minus
counterfactual accuracy.

Adapter transport failures mark the pair as errored and remove it from the
denominator; they are reported, never silently dropped.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

from .domain import CtfPair, Problem, SourceCode
from .testkit import DiffExecutionError, RunLimits, RunnerSpec, behavior_diff, judge

logger = logging.getLogger(__name__)

ENV_LLM_API_KEY = "CTF_LLM_API_KEY"


class AdapterError(RuntimeError):
    pass


class ModelAdapter(Protocol):
    adapter_id: str

    def generate(self, problem: Problem) -> SourceCode:
        """One greedy completion for the problem."""
        ...


class ScriptedAdapter:
    """Returns canned programs by problem id. For tests and offline runs."""

    def __init__(self, adapter_id: str, programs: Mapping[str, SourceCode]):
        self.adapter_id = adapter_id
        self.programs = dict(programs)

    def generate(self, problem: Problem) -> SourceCode:
        program = self.programs.get(problem.id)
        if program is None:
            raise AdapterError(f"adapter {self.adapter_id!r} has no program for {problem.id!r}")
        return program


def mimic_original_adapter(
    pairs: Sequence[CtfPair], originals: Mapping[str, Problem], adapter_id: str = "mimic-original"
) -> ScriptedAdapter:
    """Adapter that answers every side of a pair with the original reference
    solution, modeling a perfectly insensitive model."""
    programs: dict[str, SourceCode] = {}
    for pair in pairs:
        original = originals[pair.original]
        if original.solution is None:
            raise AdapterError(f"original {original.id!r} has no reference solution")
        programs[original.id] = original.solution
        programs[pair.ctf_problem.id] = original.solution
    return ScriptedAdapter(adapter_id, programs)


def per_side_reference_adapter(
    pairs: Sequence[CtfPair], originals: Mapping[str, Problem], adapter_id: str = "reference"
) -> ScriptedAdapter:
    """Adapter that answers each side with that side's own reference solution,
    modeling a perfectly adapted model (zero drop by construction)."""
    programs: dict[str, SourceCode] = {}
    for pair in pairs:
        original = originals[pair.original]
        if original.solution is None or pair.ctf_problem.solution is None:
            raise AdapterError(f"pair {pair.ctf_problem.id!r} is missing a reference solution")
        programs[original.id] = original.solution
        programs[pair.ctf_problem.id] = pair.ctf_problem.solution
    return ScriptedAdapter(adapter_id, programs)


class HttpModelAdapter:
    """JSON-over-HTTP completion adapter.

    POST {"model": ..., "prompt": ...} -> {"completion": "..."}; bearer auth
    from CTF_LLM_API_KEY. The prompt is the problem description followed by
    the starter code, when present.
    """

    def __init__(
        self,
        url: str,
        adapter_id: str,
        *,
        language_tag: str = "python",
        max_retries: int = 3,
        timeout: float = 120.0,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
    ):
        self.url = url
        self.adapter_id = adapter_id
        self.language_tag = language_tag
        self.max_retries = max_retries
        self.timeout = timeout
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap

    def generate(self, problem: Problem) -> SourceCode:
        prompt = problem.question_content
        if problem.starter_code:
            prompt += "\n\nStarter code:\n" + problem.starter_code
        headers = {}
        api_key = os.environ.get(ENV_LLM_API_KEY)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = httpx.post(
                    self.url,
                    json={"model": self.adapter_id, "prompt": prompt},
                    headers=headers,
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                completion = resp.json().get("completion")
                if not isinstance(completion, str):
                    raise AdapterError("endpoint response missing 'completion' string")
                return SourceCode(language_tag=self.language_tag, body=completion)
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    delay = min(self.backoff_cap, self.backoff_base * (2**attempt))
                    logger.warning("adapter %s failed (%s); retrying in %.1fs", self.adapter_id, exc, delay)
                    time.sleep(delay)
        raise AdapterError(
            f"adapter {self.adapter_id} failed after {self.max_retries + 1} attempts: {last_error}"
        )


@dataclass(frozen=True)
class PairOutcome:
    original_id: str
    ctf_id: str
    ori_passed: bool
    ctf_passed: bool
    errored: bool = False
    error: str = ""

    def to_json(self) -> dict[str, Any]:
        return {
            "original_id": self.original_id,
            "ctf_id": self.ctf_id,
            "ori_passed": self.ori_passed,
            "ctf_passed": self.ctf_passed,
            "errored": self.errored,
            "error": self.error,
        }


@dataclass(frozen=True)
class EvalReport:
    model_id: str
    total_pairs: int
    errored_pairs: int
    ori_acc: float
    ctf_acc: float
    drop: float
    outcomes: tuple[PairOutcome, ...]
    divergence_inputs: dict[str, list[str]] | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "total_pairs": self.total_pairs,
            "errored_pairs": self.errored_pairs,
            "ori_acc": self.ori_acc,
            "ctf_acc": self.ctf_acc,
            "drop": self.drop,
            "outcomes": [o.to_json() for o in self.outcomes],
            "divergence_inputs": self.divergence_inputs,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "EvalReport":
        return cls(
            model_id=str(obj["model_id"]),
            total_pairs=int(obj["total_pairs"]),
            errored_pairs=int(obj["errored_pairs"]),
            ori_acc=float(obj["ori_acc"]),
            ctf_acc=float(obj["ctf_acc"]),
            drop=float(obj["drop"]),
            outcomes=tuple(
                PairOutcome(
                    original_id=str(o["original_id"]),
                    ctf_id=str(o["ctf_id"]),
                    ori_passed=bool(o["ori_passed"]),
                    ctf_passed=bool(o["ctf_passed"]),
                    errored=bool(o.get("errored", False)),
                    error=str(o.get("error", "")),
                )
                for o in obj.get("outcomes", [])
            ),
            divergence_inputs=obj.get("divergence_inputs"),
        )


def sensitivity_drop(ori_acc: float, ctf_acc: float) -> float:
    """Accuracy lost when moving from original to counterfactual problems."""
    return ori_acc - ctf_acc


def evaluate_pairs(
    adapter: ModelAdapter,
    pairs: Sequence[CtfPair],
    originals: Mapping[str, Problem],
    limits: RunLimits | None = None,
    registry: Mapping[str, RunnerSpec] | None = None,
    *,
    include_divergence: bool = False,
) -> EvalReport:
    """Judge one adapter over original/counterfactual pairs.

    Each side is judged strictly against its own suite. A pair whose
    generation cannot be obtained (transport failure) is errored and excluded
    from the accuracy denominator. With ``include_divergence``, the inputs on
    which the two reference solutions disagree are reported per pair; since
    counterfactual suites inherit the original inputs, those are exactly the
    cases a sensitive model must answer differently.
    """
    if not pairs:
        raise ValueError("evaluate_pairs requires at least one pair")
    outcomes: list[PairOutcome] = []
    divergence: dict[str, list[str]] = {}
    for pair in pairs:
        original = originals.get(pair.original)
        if original is None:
            raise ValueError(f"pair references unknown original {pair.original!r}")
        if not original.tests.cases or not pair.ctf_problem.tests.cases:
            raise ValueError(f"pair {pair.ctf_problem.id!r} has an incomplete test suite")
        try:
            ori_gen = adapter.generate(original)
            ctf_gen = adapter.generate(pair.ctf_problem)
        except AdapterError as exc:
            outcomes.append(
                PairOutcome(
                    original_id=original.id,
                    ctf_id=pair.ctf_problem.id,
                    ori_passed=False,
                    ctf_passed=False,
                    errored=True,
                    error=str(exc),
                )
            )
            logger.warning("pair %s errored: %s", pair.ctf_problem.id, exc)
            continue
        ori_result = judge(
            ori_gen, original.tests, limits, registry,
            entry_point=original.metadata.get("entry_point"),
        )
        ctf_result = judge(
            ctf_gen, pair.ctf_problem.tests, limits, registry,
            entry_point=pair.ctf_problem.metadata.get("entry_point"),
        )
        outcomes.append(
            PairOutcome(
                original_id=original.id,
                ctf_id=pair.ctf_problem.id,
                ori_passed=ori_result.passed,
                ctf_passed=ctf_result.passed,
            )
        )
        if include_divergence and original.solution and pair.ctf_problem.solution:
            try:
                divergence[pair.ctf_problem.id] = behavior_diff(
                    original.solution,
                    pair.ctf_problem.solution,
                    original.tests.inputs(),
                    limits,
                    registry,
                )
            except DiffExecutionError as exc:
                logger.warning("divergence skipped for %s: %s", pair.ctf_problem.id, exc)

    scored = [o for o in outcomes if not o.errored]
    if not scored:
        raise ValueError("every pair errored; no accuracy to report")
    ori_acc = sum(o.ori_passed for o in scored) / len(scored)
    ctf_acc = sum(o.ctf_passed for o in scored) / len(scored)
    return EvalReport(
        model_id=adapter.adapter_id,
        total_pairs=len(pairs),
        errored_pairs=len(outcomes) - len(scored),
        ori_acc=ori_acc,
        ctf_acc=ctf_acc,
        drop=sensitivity_drop(ori_acc, ctf_acc),
        outcomes=tuple(outcomes),
        divergence_inputs=divergence if include_divergence else None,
    )


def render_report(reports: Iterable[EvalReport], fmt: str = "table") -> str:
    """Render evaluation reports as an aligned table, JSON, or CSV plot data."""
    reports = list(reports)
    if fmt == "json":
        return json.dumps([r.to_json() for r in reports], ensure_ascii=False, indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["model", "ori_acc", "ctf_acc", "drop", "pairs", "errored"])
        for r in reports:
            writer.writerow(
                [r.model_id, f"{r.ori_acc:.6f}", f"{r.ctf_acc:.6f}", f"{r.drop:+.6f}",
                 r.total_pairs, r.errored_pairs]
            )
        return buf.getvalue()
    if fmt == "table":
        header = f"{'model':<24} {'ori':>8} {'ctf':>8} {'drop':>8} {'pairs':>6} {'err':>4}"
        lines = [header, "-" * len(header)]
        for r in reports:
            lines.append(
                f"{r.model_id:<24} {r.ori_acc:>8.3f} {r.ctf_acc:>8.3f} "
                f"{r.drop:>+8.3f} {r.total_pairs:>6d} {r.errored_pairs:>4d}"
            )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}; expected table, json, or csv")
