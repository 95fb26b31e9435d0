"""Candidate generation: prompt rendering, sampling, parsing, dedup.

A perturbation round asks each configured text provider for a handful of
rewrites of one problem description. Responses must contain the marker line
"###Counterfactual Problem" followed by a JSON object with the rewritten
problem. The stage order is fixed: sample -> parse -> dedup; the epsilon
filter runs afterwards (metrics.epsilon_filter). Stages only remove or
annotate candidates, never edit their text.

Provider failures are recorded and reduce the effective sample count; they
never abort a round.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import httpx

from .domain import CandidateVariant, Problem, content_key

logger = logging.getLogger(__name__)

ENV_LLM_API_KEY = "CTF_LLM_API_KEY"
CTF_MARKER = "###Counterfactual Problem"
ORIGINAL_HEADING = "### Original Problem"

DEFAULT_TEMPLATE_BODY = """You revise competitive programming problems. Rewrite the problem below into a counterfactual variant of itself.

Goals, in priority order:
1. Change the problem description as little as possible. Keep the narrative, names, constraints, and input/output format; edit only the few words that carry the change.
2. Make the change force the reference solution to change as much as possible. A tiny wording edit should require a genuinely different algorithm.
3. The rewritten problem must be well-posed, self-consistent, and solvable.
4. Rewrite the sample test cases so every sample input/output pair is correct for the new problem, keeping the original sample inputs where they remain valid.
5. Answer with the marker line "###Counterfactual Problem" on its own line, followed by one JSON object with exactly these fields: question_content, starter_code, public_test_cases, metadata.

### Original Problem
{original_problem}
"""


class ParseError(ValueError):
    pass


class ProviderError(RuntimeError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body with named placeholders, each used exactly once."""

    body: str
    placeholders: tuple[str, ...] = ("original_problem",)

    def __post_init__(self) -> None:
        for name in self.placeholders:
            token = "{" + name + "}"
            n = self.body.count(token)
            if n != 1:
                raise ValueError(f"template must contain {token} exactly once, found {n}")

    def render(self, **values: str) -> str:
        missing = set(self.placeholders) - set(values)
        if missing:
            raise ValueError(f"missing template values: {sorted(missing)}")
        text = self.body
        for name in self.placeholders:
            text = text.replace("{" + name + "}", values[name])
        return text


def default_template() -> PromptTemplate:
    return PromptTemplate(body=DEFAULT_TEMPLATE_BODY)


def render_prompt(problem: Problem, template: PromptTemplate | None = None) -> str:
    """Render the perturbation prompt for one problem.

    The problem is serialized as JSON (description, starter code, public test
    cases, metadata; never the reference solution) under the
    "### Original Problem" heading.
    """
    template = template or default_template()
    serialized = json.dumps(
        {
            "question_content": problem.question_content,
            "starter_code": problem.starter_code,
            "public_test_cases": [
                {"input": c.input, "output": c.output, "testtype": c.testtype}
                for c in problem.tests.cases
            ],
            "metadata": problem.metadata,
        },
        ensure_ascii=False,
        indent=2,
    )
    return template.render(original_problem=serialized)


@dataclass(frozen=True)
class SamplerConfig:
    """How many samples to draw and any provider-specific knobs.

    options is free-form and recorded alongside outputs so that a run's
    sampling parameters are always reconstructible from its archive.
    """

    samples_per_provider: int = 5
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.samples_per_provider <= 0:
            raise ValueError("samples_per_provider must be positive")


class TextProvider(Protocol):
    provider_id: str

    def generate(self, prompt: str, *, problem_id: str, sample_index: int) -> str:
        ...


def _fs_key(problem_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", problem_id)


class ScriptedProvider:
    """Replays canned responses from a directory.

    Response files are named "<problem id>__<sample index>.txt" (problem ids
    sanitized for the filesystem). A missing file is a provider failure.
    """

    def __init__(self, directory: str | os.PathLike[str], provider_id: str = "scripted"):
        self.directory = os.fspath(directory)
        self.provider_id = provider_id

    def generate(self, prompt: str, *, problem_id: str, sample_index: int) -> str:
        path = os.path.join(self.directory, f"{_fs_key(problem_id)}__{sample_index}.txt")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return fh.read()
        except OSError as exc:
            raise ProviderError(f"no scripted response at {path}: {exc}") from None


class HttpTextProvider:
    """Minimal JSON-over-HTTP completion client.

    POST {"model": ..., "prompt": ..., "sample_index": ..., **options} and
    expects {"completion": "..."} back. Bearer auth from CTF_LLM_API_KEY.
    """

    def __init__(
        self,
        url: str,
        provider_id: str,
        *,
        options: dict[str, Any] | None = None,
        max_retries: int = 3,
        timeout: float = 120.0,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
    ):
        self.url = url
        self.provider_id = provider_id
        self.options = dict(options or {})
        self.max_retries = max_retries
        self.timeout = timeout
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap

    def generate(self, prompt: str, *, problem_id: str, sample_index: int) -> str:
        headers = {}
        api_key = os.environ.get(ENV_LLM_API_KEY)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.provider_id,
            "prompt": prompt,
            "sample_index": sample_index,
            **self.options,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = httpx.post(self.url, json=payload, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                completion = resp.json().get("completion")
                if not isinstance(completion, str):
                    raise ProviderError("endpoint response missing 'completion' string")
                return completion
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    delay = min(self.backoff_cap, self.backoff_base * (2**attempt))
                    logger.warning(
                        "provider %s failed (%s); retrying in %.1fs", self.provider_id, exc, delay
                    )
                    time.sleep(delay)
        raise ProviderError(
            f"provider {self.provider_id} failed after {self.max_retries + 1} attempts: {last_error}"
        )


# === response parsing ===

_MARKER_RE = re.compile(r"###\s*Counterfactual Problem", re.IGNORECASE)


def _first_json_object(text: str, start: int) -> dict[str, Any]:
    decoder = json.JSONDecoder()
    pos = text.find("{", start)
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    raise ParseError("no JSON object found after the counterfactual marker")


def parse_candidate(response_text: str) -> dict[str, Any]:
    """Extract the rewritten problem from a provider response.

    Locates the "###Counterfactual Problem" marker, then parses the first
    balanced JSON object after it. Raises ParseError on a missing marker,
    malformed JSON, or an empty question_content.
    """
    match = _MARKER_RE.search(response_text)
    if match is None:
        raise ParseError(f"response does not contain the {CTF_MARKER!r} marker")
    obj = _first_json_object(response_text, match.end())
    question = obj.get("question_content")
    if not isinstance(question, str) or not question.strip():
        raise ParseError("parsed object has no usable question_content")
    return obj


# === sampling ===

@dataclass(frozen=True)
class SampleFailure:
    provider_id: str
    sample_index: int
    stage: str  # "generate" | "parse"
    error: str

    def to_json(self) -> dict[str, Any]:
        return {
            "provider_id": self.provider_id,
            "sample_index": self.sample_index,
            "stage": self.stage,
            "error": self.error,
        }


def sample_candidates(
    problem: Problem,
    providers: Sequence[TextProvider],
    config: SamplerConfig | None = None,
    template: PromptTemplate | None = None,
    max_workers: int = 1,
) -> tuple[list[CandidateVariant], list[SampleFailure]]:
    """Draw samples_per_provider rewrites from each provider and parse them.

    Returns (candidates, failures). Output order is deterministic: providers
    in the given order, samples by index, independent of worker count.
    Failures reduce the effective sample count without aborting the round.
    """
    config = config or SamplerConfig()
    prompt = render_prompt(problem, template)
    slots = [
        (p_idx, provider, k)
        for p_idx, provider in enumerate(providers)
        for k in range(config.samples_per_provider)
    ]

    def fetch(slot: tuple[int, TextProvider, int]) -> tuple[int, int, str | None, str | None]:
        p_idx, provider, k = slot
        try:
            return p_idx, k, provider.generate(prompt, problem_id=problem.id, sample_index=k), None
        except ProviderError as exc:
            return p_idx, k, None, str(exc)

    if max_workers > 1 and len(slots) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            raw = list(pool.map(fetch, slots))
    else:
        raw = [fetch(slot) for slot in slots]
    raw.sort(key=lambda item: (item[0], item[1]))

    candidates: list[CandidateVariant] = []
    failures: list[SampleFailure] = []
    for p_idx, k, text, error in raw:
        provider = providers[p_idx]
        if text is None:
            failures.append(
                SampleFailure(provider.provider_id, k, "generate", error or "unknown error")
            )
            logger.warning("provider %s sample %d failed: %s", provider.provider_id, k, error)
            continue
        try:
            parsed = parse_candidate(text)
        except ParseError as exc:
            failures.append(SampleFailure(provider.provider_id, k, "parse", str(exc)))
            logger.warning("provider %s sample %d unparsable: %s", provider.provider_id, k, exc)
            continue
        candidates.append(
            CandidateVariant(
                id=f"{problem.id}#cand-{provider.provider_id}-{k}",
                parent_id=problem.id,
                question_content=str(parsed["question_content"]),
                starter_code=str(parsed.get("starter_code", problem.starter_code)),
                generator=f"{provider.provider_id}:{k}",
                metadata={"provider_metadata": parsed.get("metadata", {})},
            )
        )
    return candidates, failures


def dedup_candidates(candidates: Sequence[CandidateVariant]) -> list[CandidateVariant]:
    """Drop candidates whose normalized description repeats an earlier one."""
    seen: set[str] = set()
    kept: list[CandidateVariant] = []
    for cand in candidates:
        key = content_key(cand)
        if key in seen:
            continue
        seen.add(key)
        kept.append(cand)
    return kept
