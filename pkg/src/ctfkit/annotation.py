"""Human annotation campaign: task queue, verdicts, resolution, pairing.

Tasks move through a fixed state machine:

    pending -> annotated_once -> resolved -> rejected
                                          -> solution_attached

Every task is judged by at least two distinct annotators. Two agreeing
verdicts resolve it; a disagreement pulls in a third annotator and the
majority wins; three distinct categories escalate to a manual-adjudication
flag. Resolved counterfactual tasks then need an attached reference solution
(smoke-tested on a real input) before they can enter a pair.

All mutations append to a line-delimited JSON event log. Replaying the log
reconstructs the exact store state, so a campaign can be resumed, audited,
or rebuilt from scratch. Events carry a sequence number, not a wall-clock
timestamp, which keeps replays and repeated runs byte-identical.
"""

from __future__ import annotations

import difflib
import json
import os
import re
import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping

from .domain import (
    CandidateVariant,
    CtfPair,
    Problem,
    SourceCode,
    candidate_from_json,
    candidate_to_json,
    derive_ctf_id,
    TestCase,
    TestSuite,
)
from .metrics import ObjectiveParams, ctf_objective

CATEGORY_BAD = "bad"
CATEGORY_ROBUST = "robust"
CATEGORY_CTF = "ctf"
CATEGORIES = (CATEGORY_BAD, CATEGORY_ROBUST, CATEGORY_CTF)

STATE_PENDING = "pending"
STATE_ANNOTATED_ONCE = "annotated_once"
STATE_RESOLVED = "resolved"
STATE_REJECTED = "rejected"
STATE_SOLUTION_ATTACHED = "solution_attached"
STATES = (
    STATE_PENDING,
    STATE_ANNOTATED_ONCE,
    STATE_RESOLVED,
    STATE_REJECTED,
    STATE_SOLUTION_ATTACHED,
)

DEFAULT_TRIAL_SIZE = 10


class AnnotationError(ValueError):
    pass


class NoMajorityError(AnnotationError):
    """Three verdicts, three categories: needs manual adjudication."""

    def __init__(self, task: "AnnotationTask"):
        super().__init__(f"task {task.id!r} has no majority; flagged for manual adjudication")
        self.task = task


class SmokeTestError(AnnotationError):
    """The submitted solution did not execute cleanly on the smoke input."""

    def __init__(self, message: str, result: Any):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class Verdict:
    annotator: str
    category: str
    solvable: bool
    is_ctf: bool
    difficulty_changed: bool = False
    notes: str = ""

    def __post_init__(self) -> None:
        if not self.annotator:
            raise AnnotationError("verdict requires an annotator id")
        if self.category not in CATEGORIES:
            raise AnnotationError(f"unknown category {self.category!r}; expected one of {CATEGORIES}")
        if self.category == CATEGORY_CTF and not self.solvable:
            raise AnnotationError("a ctf verdict asserts the variant is solvable")
        if self.is_ctf != (self.category == CATEGORY_CTF):
            raise AnnotationError("is_ctf must agree with the category")

    def to_json(self) -> dict[str, Any]:
        return {
            "annotator": self.annotator,
            "category": self.category,
            "solvable": self.solvable,
            "is_ctf": self.is_ctf,
            "difficulty_changed": self.difficulty_changed,
            "notes": self.notes,
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "Verdict":
        return cls(
            annotator=str(obj["annotator"]),
            category=str(obj["category"]),
            solvable=bool(obj["solvable"]),
            is_ctf=bool(obj["is_ctf"]),
            difficulty_changed=bool(obj.get("difficulty_changed", False)),
            notes=str(obj.get("notes", "")),
        )


@dataclass(frozen=True)
class Resolution:
    outcome: str
    verdicts: tuple[Verdict, ...]


@dataclass
class AnnotationTask:
    id: str
    candidate: CandidateVariant
    original_id: str
    state: str = STATE_PENDING
    verdicts: tuple[Verdict, ...] = ()
    resolution: Resolution | None = None
    solution: SourceCode | None = None
    ds: float | None = None
    ds_provider: str = ""
    solution_warning: str | None = None
    trial: bool = False
    needs_adjudication: bool = False

    def annotators(self) -> set[str]:
        return {v.annotator for v in self.verdicts}


# === word-level diff spans (served to clients; clients never recompute) ===

_TOKEN_RE = re.compile(r"\S+|\s+")


def diff_spans(a: str, b: str) -> list[dict[str, str]]:
    """Word-level diff between two texts as replace/insert/delete/equal spans.

    Lossless: concatenating the "a" sides reproduces ``a`` exactly, and the
    "b" sides reproduce ``b``.
    """
    ta = _TOKEN_RE.findall(a)
    tb = _TOKEN_RE.findall(b)
    spans: list[dict[str, str]] = []
    for op, i1, i2, j1, j2 in difflib.SequenceMatcher(a=ta, b=tb, autojunk=False).get_opcodes():
        spans.append({"op": op, "a": "".join(ta[i1:i2]), "b": "".join(tb[j1:j2])})
    return spans


# === event log ===

class EventLog:
    """Append-only line-delimited JSON log."""

    def __init__(self, path: str | os.PathLike[str] | None):
        self.path = None if path is None else os.fspath(path)

    def append(self, event: dict[str, Any]) -> None:
        if self.path is None:
            return
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(event, ensure_ascii=False, separators=(",", ":")) + "\n")
            fh.flush()

    def read_all(self) -> list[dict[str, Any]]:
        if self.path is None or not os.path.exists(self.path):
            return []
        events = []
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return events


# === finished candidates and pair selection ===

@dataclass(frozen=True)
class AttachedCandidate:
    """A candidate that survived annotation and carries its new solution."""

    candidate: CandidateVariant
    solution: SourceCode
    ds: float
    ds_provider: str = ""


def select_best_pair(
    original: Problem,
    attached: Iterable[AttachedCandidate],
    params: ObjectiveParams | None = None,
) -> CtfPair:
    """Pick the candidate maximizing objective = ds - lambda * dq.

    Ties break toward the lowest dq, then the earliest candidate id. The
    returned pair's problem inherits the original test inputs in order
    (outputs are reconstructed later by the test-completion stage) and is
    id'd as "<original id>#ctf<k>" where k is the winner's position among
    the finished candidates in id order.
    """
    params = params or ObjectiveParams()
    pool = list(attached)
    if not pool:
        raise AnnotationError(f"no finished candidates for problem {original.id!r}")
    for item in pool:
        if item.candidate.parent_id != original.id:
            raise AnnotationError(
                f"candidate {item.candidate.id!r} belongs to {item.candidate.parent_id!r},"
                f" not {original.id!r}"
            )
        if item.candidate.dq is None:
            raise AnnotationError(f"candidate {item.candidate.id!r} has no dq; filter it first")

    best: AttachedCandidate | None = None
    best_score = 0.0
    for item in pool:
        score = ctf_objective(item.candidate.dq, item.ds, params)
        if best is None:
            best, best_score = item, score
            continue
        better = score > best_score
        if score == best_score:
            if item.candidate.dq < best.candidate.dq:
                better = True
            elif item.candidate.dq == best.candidate.dq and item.candidate.id < best.candidate.id:
                better = True
        if better:
            best, best_score = item, score
    assert best is not None

    ordered_ids = sorted(item.candidate.id for item in pool)
    k = ordered_ids.index(best.candidate.id)
    inherited = TestSuite(
        cases=tuple(
            TestCase(input=c.input, output="", testtype=c.testtype)
            for c in original.tests.cases
        ),
        mode=original.tests.mode,
    )
    ctf_problem = Problem(
        id=derive_ctf_id(original.id, k),
        question_content=best.candidate.question_content,
        starter_code=best.candidate.starter_code,
        tests=inherited,
        solution=best.solution,
        metadata={
            "candidate_id": best.candidate.id,
            "generator": best.candidate.generator,
            "ds_provider": best.ds_provider,
        },
    )
    dq = float(best.candidate.dq)  # validated above
    return CtfPair(
        original=original.id,
        ctf_problem=ctf_problem,
        dq=dq,
        ds=best.ds,
        objective=ctf_objective(dq, best.ds, params),
    )


# === the store ===

SmokeRunner = Callable[[SourceCode, Problem], Any]
SolutionScorer = Callable[[SourceCode, Problem], tuple[float, str]]


class AnnotationStore:
    """Single-writer annotation state, backed by an append-only event log.

    ``originals`` maps problem id -> Problem for every problem whose
    candidates may be enqueued. ``smoke_runner`` executes a submitted
    solution on one real input and returns the execution result;
    ``solution_scorer`` returns (ds, provider_id) for a submitted solution
    against the original reference. Both are injected so the store itself
    stays free of process and network concerns.
    """

    def __init__(
        self,
        originals: Mapping[str, Problem],
        log: EventLog | None = None,
        *,
        trial_size: int = DEFAULT_TRIAL_SIZE,
        params: ObjectiveParams | None = None,
        smoke_runner: SmokeRunner | None = None,
        solution_scorer: SolutionScorer | None = None,
    ):
        if trial_size < 0:
            raise AnnotationError("trial_size must be >= 0")
        self.originals = dict(originals)
        self.log = log or EventLog(None)
        self.trial_size = trial_size
        self.params = params or ObjectiveParams()
        self.smoke_runner = smoke_runner
        self.solution_scorer = solution_scorer
        self._tasks: dict[str, AnnotationTask] = {}
        self._order: list[str] = []
        self._seq = 0
        self._lock = threading.RLock()

    # --- event plumbing ---

    def _emit(self, event: str, **payload: Any) -> None:
        self._seq += 1
        self.log.append({"seq": self._seq, "event": event, **payload})

    def replay(self, events: Iterable[Mapping[str, Any]]) -> None:
        """Rebuild state by folding logged events. No side effects re-run."""
        with self._lock:
            for event in events:
                kind = event.get("event")
                self._seq = max(self._seq, int(event.get("seq", 0)))
                if kind == "enqueue":
                    cand = candidate_from_json(event["candidate"])
                    task = AnnotationTask(
                        id=cand.id,
                        candidate=cand,
                        original_id=str(event["original_id"]),
                        trial=bool(event.get("trial", False)),
                    )
                    self._tasks[task.id] = task
                    self._order.append(task.id)
                elif kind == "verdict":
                    task = self._tasks[event["task_id"]]
                    task.verdicts = task.verdicts + (Verdict.from_json(event["verdict"]),)
                    if task.state == STATE_PENDING:
                        task.state = STATE_ANNOTATED_ONCE
                elif kind == "resolve":
                    task = self._tasks[event["task_id"]]
                    task.resolution = Resolution(
                        outcome=str(event["outcome"]), verdicts=task.verdicts
                    )
                    task.state = STATE_RESOLVED
                elif kind == "reject":
                    task = self._tasks[event["task_id"]]
                    task.state = STATE_REJECTED
                elif kind == "flag_adjudication":
                    self._tasks[event["task_id"]].needs_adjudication = True
                elif kind == "attach_solution":
                    task = self._tasks[event["task_id"]]
                    sol = event["solution"]
                    task.solution = SourceCode(
                        language_tag=str(sol["language_tag"]), body=str(sol["body"])
                    )
                    task.ds = float(event["ds"])
                    task.ds_provider = str(event.get("ds_provider", ""))
                    task.solution_warning = event.get("warning")
                    task.state = STATE_SOLUTION_ATTACHED
                else:
                    raise AnnotationError(f"unknown event type {kind!r} in log")

    @classmethod
    def from_log(
        cls,
        originals: Mapping[str, Problem],
        log: EventLog,
        **kwargs: Any,
    ) -> "AnnotationStore":
        store = cls(originals, log, **kwargs)
        store.replay(log.read_all())
        return store

    # --- queue operations ---

    def enqueue(self, candidate: CandidateVariant) -> AnnotationTask:
        with self._lock:
            if candidate.dq is None:
                raise AnnotationError(
                    f"candidate {candidate.id!r} has no dq; only filtered candidates are annotatable"
                )
            if candidate.parent_id not in self.originals:
                raise AnnotationError(f"unknown original {candidate.parent_id!r}")
            if candidate.id in self._tasks:
                raise AnnotationError(f"candidate {candidate.id!r} is already enqueued")
            task = AnnotationTask(
                id=candidate.id,
                candidate=candidate,
                original_id=candidate.parent_id,
                trial=len(self._order) < self.trial_size,
            )
            self._tasks[task.id] = task
            self._order.append(task.id)
            self._emit(
                "enqueue",
                candidate=candidate_to_json(candidate),
                original_id=task.original_id,
                trial=task.trial,
            )
            return task

    def get(self, task_id: str) -> AnnotationTask:
        task = self._tasks.get(task_id)
        if task is None:
            raise KeyError(f"no task {task_id!r}")
        return task

    def tasks(self) -> list[AnnotationTask]:
        return [self._tasks[tid] for tid in self._order]

    def trial_task_ids(self) -> list[str]:
        return [tid for tid in self._order if self._tasks[tid].trial]

    def next_task(self, annotator: str) -> AnnotationTask | None:
        """First task, in enqueue order, still needing this annotator's verdict."""
        if not annotator:
            raise AnnotationError("annotator id must be non-empty")
        with self._lock:
            for tid in self._order:
                task = self._tasks[tid]
                if task.state not in (STATE_PENDING, STATE_ANNOTATED_ONCE):
                    continue
                if task.needs_adjudication:
                    continue
                if annotator in task.annotators():
                    continue
                return task
            return None

    def submit_verdict(self, task_id: str, verdict: Verdict) -> AnnotationTask:
        """Record one annotator's verdict and advance the state machine.

        Idempotent per (task, annotator): resubmitting an identical verdict
        is a no-op; a conflicting one from the same annotator is an error.
        """
        with self._lock:
            task = self.get(task_id)
            for existing in task.verdicts:
                if existing.annotator == verdict.annotator:
                    if existing == verdict:
                        return task
                    raise AnnotationError(
                        f"annotator {verdict.annotator!r} already judged task {task_id!r}"
                    )
            if task.state not in (STATE_PENDING, STATE_ANNOTATED_ONCE):
                raise AnnotationError(f"task {task_id!r} is {task.state}; verdicts are closed")
            if task.needs_adjudication:
                raise AnnotationError(f"task {task_id!r} awaits manual adjudication")

            task.verdicts = task.verdicts + (verdict,)
            self._emit("verdict", task_id=task_id, verdict=verdict.to_json())
            if task.state == STATE_PENDING:
                task.state = STATE_ANNOTATED_ONCE

            categories = [v.category for v in task.verdicts]
            if len(categories) == 2 and categories[0] == categories[1]:
                self._resolve(task, categories[0])
            elif len(categories) == 3:
                winner = next((c for c in set(categories) if categories.count(c) >= 2), None)
                if winner is None:
                    task.needs_adjudication = True
                    self._emit("flag_adjudication", task_id=task_id)
                    raise NoMajorityError(task)
                self._resolve(task, winner)
            return task

    def _resolve(self, task: AnnotationTask, outcome: str) -> None:
        task.resolution = Resolution(outcome=outcome, verdicts=task.verdicts)
        task.state = STATE_RESOLVED
        self._emit("resolve", task_id=task.id, outcome=outcome, verdict_count=len(task.verdicts))
        if outcome != CATEGORY_CTF:
            task.state = STATE_REJECTED
            self._emit("reject", task_id=task.id, reason=outcome)

    def _check_attachable(self, task: AnnotationTask, solution: SourceCode) -> Problem:
        if task.state != STATE_RESOLVED or task.resolution is None:
            raise AnnotationError(
                f"task {task.id!r} is {task.state}; solutions attach to resolved tasks only"
            )
        if task.resolution.outcome != CATEGORY_CTF:
            raise AnnotationError(f"task {task.id!r} resolved as {task.resolution.outcome}")
        if not solution.body.strip():
            raise AnnotationError("solution body must be non-empty")
        return self.originals[task.original_id]

    def preview_solution(
        self, task_id: str, solution: SourceCode
    ) -> tuple[Any, float, str, str | None]:
        """Smoke-run and score a solution without attaching it.

        Returns (smoke result, ds, ds provider, warning). Same preconditions
        as attach_solution; no state change, no events.
        """
        with self._lock:
            task = self.get(task_id)
            original = self._check_attachable(task, solution)
            result = None
            if self.smoke_runner is not None:
                result = self.smoke_runner(solution, original)
                if not getattr(result, "ok", False):
                    raise SmokeTestError(
                        f"solution failed the smoke run ({getattr(result, 'status', 'error')})",
                        result,
                    )
            ds, ds_provider = (0.0, "")
            if self.solution_scorer is not None:
                ds, ds_provider = self.solution_scorer(solution, original)
            warning = None
            if ds == 0.0 and self.solution_scorer is not None:
                warning = "solution distance is 0; variant may be robust rather than counterfactual"
            return result, ds, ds_provider, warning

    def attach_solution(self, task_id: str, solution: SourceCode) -> AnnotationTask:
        """Attach the new reference solution to a resolved counterfactual task.

        The solution must execute cleanly on a real input (smoke test); its
        distance to the original reference is computed and stored. A solution
        distance of zero is accepted but flagged, since it usually means the
        task was Robust rather than counterfactual.
        """
        with self._lock:
            task = self.get(task_id)
            original = self._check_attachable(task, solution)
            if self.smoke_runner is not None:
                result = self.smoke_runner(solution, original)
                if not getattr(result, "ok", False):
                    raise SmokeTestError(
                        f"solution failed the smoke run ({getattr(result, 'status', 'error')})",
                        result,
                    )
            ds, ds_provider = (0.0, "")
            if self.solution_scorer is not None:
                ds, ds_provider = self.solution_scorer(solution, original)
            warning = None
            if ds == 0.0 and self.solution_scorer is not None:
                warning = "solution distance is 0; variant may be robust rather than counterfactual"
            task.solution = solution
            task.ds = ds
            task.ds_provider = ds_provider
            task.solution_warning = warning
            task.state = STATE_SOLUTION_ATTACHED
            self._emit(
                "attach_solution",
                task_id=task_id,
                solution={"language_tag": solution.language_tag, "body": solution.body},
                ds=ds,
                ds_provider=ds_provider,
                warning=warning,
            )
            return task

    # --- derived views ---

    def finished_by_original(self, include_trial: bool = False) -> dict[str, list[AttachedCandidate]]:
        out: dict[str, list[AttachedCandidate]] = {}
        for tid in self._order:
            task = self._tasks[tid]
            if task.state != STATE_SOLUTION_ATTACHED:
                continue
            if task.trial and not include_trial:
                continue
            assert task.solution is not None and task.ds is not None
            out.setdefault(task.original_id, []).append(
                AttachedCandidate(
                    candidate=task.candidate,
                    solution=task.solution,
                    ds=task.ds,
                    ds_provider=task.ds_provider,
                )
            )
        return out

    def pairs(self) -> list[CtfPair]:
        """Best pair per original, over non-trial finished tasks, by original id."""
        finished = self.finished_by_original(include_trial=False)
        return [
            select_best_pair(self.originals[oid], finished[oid], self.params)
            for oid in sorted(finished)
        ]

    def progress(self) -> dict[str, Any]:
        counts = {state: 0 for state in STATES}
        for task in self._tasks.values():
            counts[task.state] += 1
        resolved_like = [
            t for t in self._tasks.values() if t.resolution is not None
        ]
        two_verdict = sum(1 for t in resolved_like if len(t.resolution.verdicts) == 2)
        return {
            "total": len(self._tasks),
            "by_state": counts,
            "trial_tasks": len(self.trial_task_ids()),
            "needs_adjudication": sum(1 for t in self._tasks.values() if t.needs_adjudication),
            "resolved_total": len(resolved_like),
            "first_pass_agreement": (two_verdict / len(resolved_like)) if resolved_like else None,
            "pairs_ready": len(self.finished_by_original(include_trial=False)),
        }
