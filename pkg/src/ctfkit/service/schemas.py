"""Request/response models for the annotation HTTP API."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class DiffSpan(BaseModel):
    op: str
    a: str
    b: str


class TaskView(BaseModel):
    id: str
    original_id: str
    state: str
    trial: bool
    dq: float
    generator: str
    question_original: str
    question_candidate: str
    starter_code_original: str
    starter_code_candidate: str
    diff: list[DiffSpan]
    verdict_count: int


class NextTaskOut(BaseModel):
    task: Optional[TaskView] = None
    remaining_for_annotator: int = 0


class VerdictIn(BaseModel):
    annotator: str = Field(min_length=1)
    category: str
    solvable: bool
    is_ctf: bool
    difficulty_changed: bool = False
    notes: str = ""


class TaskStateOut(BaseModel):
    id: str
    state: str
    verdict_count: int
    needs_adjudication: bool
    resolution_outcome: Optional[str] = None


class SolutionIn(BaseModel):
    language_tag: str = "python"
    body: str = Field(min_length=1)
    dry_run: bool = False


class SmokeOut(BaseModel):
    status: str
    stdout: str
    stderr: str
    exit_code: Optional[int] = None
    input: str = ""


class SolutionOut(BaseModel):
    task_id: str
    attached: bool
    state: str
    ds: Optional[float] = None
    ds_provider: str = ""
    warning: Optional[str] = None
    smoke: Optional[SmokeOut] = None


class CaseView(BaseModel):
    input: str
    output: str
    testtype: str


class SourceView(BaseModel):
    language_tag: str
    body: str


class ProblemView(BaseModel):
    id: str
    question_content: str
    starter_code: str
    public_test_cases: list[CaseView]
    metadata: dict[str, Any]
    solution: Optional[SourceView] = None


class PairView(BaseModel):
    original: str
    ctf_problem: ProblemView
    dq: float
    ds: float
    objective: float


class PairsOut(BaseModel):
    pairs: list[PairView]


class ProgressOut(BaseModel):
    total: int
    by_state: dict[str, int]
    trial_tasks: int
    needs_adjudication: int
    resolved_total: int
    first_pass_agreement: Optional[float] = None
    pairs_ready: int
