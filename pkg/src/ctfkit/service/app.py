"""HTTP front end for an annotation campaign.

Wraps an AnnotationStore behind a small JSON API:

    GET  /api/tasks/next?annotator=ID   next task needing this annotator
    POST /api/tasks/{id}/verdict        submit a verdict
    POST /api/tasks/{id}/solution       smoke-run / attach a solution
    GET  /api/pairs                     selected original/counterfactual pairs
    GET  /api/progress                  queue counts and agreement

Authentication is a shared bearer token (CTF_ANNOT_TOKEN). When the variable
is unset the API is open, which is only appropriate for local use. All
displayed metrics (dq, diff spans) are computed server-side; clients render
them verbatim.
"""

from __future__ import annotations

import os

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.staticfiles import StaticFiles

from .. import annotation as ann
from ..domain import CtfPair, SourceCode, problem_to_json
from .schemas import (
    DiffSpan,
    NextTaskOut,
    PairsOut,
    PairView,
    ProgressOut,
    SmokeOut,
    SolutionIn,
    SolutionOut,
    TaskStateOut,
    TaskView,
    VerdictIn,
)

ENV_ANNOT_TOKEN = "CTF_ANNOT_TOKEN"


def _task_view(store: ann.AnnotationStore, task: ann.AnnotationTask) -> TaskView:
    original = store.originals[task.original_id]
    spans = ann.diff_spans(original.question_content, task.candidate.question_content)
    return TaskView(
        id=task.id,
        original_id=task.original_id,
        state=task.state,
        trial=task.trial,
        dq=float(task.candidate.dq or 0.0),
        generator=task.candidate.generator,
        question_original=original.question_content,
        question_candidate=task.candidate.question_content,
        starter_code_original=original.starter_code,
        starter_code_candidate=task.candidate.starter_code,
        diff=[DiffSpan(**span) for span in spans],
        verdict_count=len(task.verdicts),
    )


def _task_state(task: ann.AnnotationTask) -> TaskStateOut:
    return TaskStateOut(
        id=task.id,
        state=task.state,
        verdict_count=len(task.verdicts),
        needs_adjudication=task.needs_adjudication,
        resolution_outcome=task.resolution.outcome if task.resolution else None,
    )


def _pair_view(pair: CtfPair) -> PairView:
    return PairView(
        original=pair.original,
        ctf_problem=problem_to_json(pair.ctf_problem),  # type: ignore[arg-type]
        dq=pair.dq,
        ds=pair.ds,
        objective=pair.objective,
    )


def create_app(
    store: ann.AnnotationStore,
    *,
    token: str | None = None,
    static_dir: str | None = None,
) -> FastAPI:
    """Build the service around one campaign's store.

    ``token`` overrides CTF_ANNOT_TOKEN; ``static_dir`` optionally serves a
    built web client at the root path.
    """
    expected_token = token if token is not None else os.environ.get(ENV_ANNOT_TOKEN)

    async def require_auth(request: Request) -> None:
        if not expected_token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {expected_token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    app = FastAPI(title="annotation service", dependencies=[Depends(require_auth)])
    app.state.store = store

    @app.get("/api/tasks/next", response_model=NextTaskOut)
    def next_task(annotator: str = Query(min_length=1)) -> NextTaskOut:
        task = store.next_task(annotator)
        remaining = sum(
            1
            for t in store.tasks()
            if t.state in (ann.STATE_PENDING, ann.STATE_ANNOTATED_ONCE)
            and not t.needs_adjudication
            and annotator not in t.annotators()
        )
        if task is None:
            return NextTaskOut(task=None, remaining_for_annotator=0)
        return NextTaskOut(task=_task_view(store, task), remaining_for_annotator=remaining)

    @app.post("/api/tasks/{task_id}/verdict", response_model=TaskStateOut)
    def submit_verdict(task_id: str, body: VerdictIn) -> TaskStateOut:
        try:
            verdict = ann.Verdict(
                annotator=body.annotator,
                category=body.category,
                solvable=body.solvable,
                is_ctf=body.is_ctf,
                difficulty_changed=body.difficulty_changed,
                notes=body.notes,
            )
        except ann.AnnotationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        try:
            task = store.submit_verdict(task_id, verdict)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ann.NoMajorityError as exc:
            # The verdict is recorded; the task now needs manual adjudication.
            return _task_state(exc.task)
        except ann.AnnotationError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return _task_state(task)

    @app.post("/api/tasks/{task_id}/solution", response_model=SolutionOut)
    def submit_solution(task_id: str, body: SolutionIn) -> SolutionOut:
        solution = SourceCode(language_tag=body.language_tag, body=body.body)
        smoke = None
        try:
            if body.dry_run:
                smoke, ds, ds_provider, warning = store.preview_solution(task_id, solution)
                task = store.get(task_id)
                attached = False
            else:
                task = store.attach_solution(task_id, solution)
                ds, ds_provider, warning = task.ds or 0.0, task.ds_provider, task.solution_warning
                attached = True
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ann.SmokeTestError as exc:
            result = exc.result
            raise HTTPException(
                status_code=422,
                detail={
                    "message": str(exc),
                    "smoke": {
                        "status": getattr(result, "status", "error"),
                        "stdout": getattr(result, "stdout", ""),
                        "stderr": getattr(result, "stderr", ""),
                        "exit_code": getattr(result, "exit_code", None),
                    },
                },
            )
        except ann.AnnotationError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        original = store.originals[store.get(task_id).original_id]
        smoke_out = None
        if smoke is not None:
            smoke_out = SmokeOut(
                status=smoke.status,
                stdout=smoke.stdout,
                stderr=smoke.stderr,
                exit_code=smoke.exit_code,
                input=original.tests.cases[0].input if original.tests.cases else "",
            )
        return SolutionOut(
            task_id=task_id,
            attached=attached,
            state=task.state,
            ds=ds,
            ds_provider=ds_provider,
            warning=warning,
            smoke=smoke_out,
        )

    @app.get("/api/pairs", response_model=PairsOut)
    def pairs() -> PairsOut:
        return PairsOut(pairs=[_pair_view(p) for p in store.pairs()])

    @app.get("/api/progress", response_model=ProgressOut)
    def progress() -> ProgressOut:
        return ProgressOut(**store.progress())

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
