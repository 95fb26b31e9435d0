"""Pipeline stages with make-style manifests.

Each stage owns a directory under the run's output root and records a
manifest: the config hash, a digest of every input it read, and digests of
what it wrote. Re-running a stage whose manifest still matches is a no-op;
--force overrides. Manifests carry a created_at timestamp for operators;
everything else about a run is deterministic, so two runs of the same config
over the same inputs produce byte-identical trees apart from that field.
"""

from __future__ import annotations

import asyncio
import dataclasses
import hashlib
import json
import logging
import os
import time
import urllib.parse
from typing import Any, Callable, Iterable, Mapping

import httpx

from . import __version__
from .annotation import AnnotationStore, EventLog
from .config import ConfigError, RunConfig
from .domain import (
    CandidateVariant,
    CtfPair,
    Problem,
    SourceCode,
    load_corpus,
    pair_from_json,
    save_corpus,
)
from .embeddings import EmbeddingCache, embed_batch
from .evaluation import EvalReport, evaluate_pairs, render_report
from .metrics import epsilon_filter, normalized_levenshtein
from .perturbation import dedup_candidates, sample_candidates
from .service import create_app
from .testkit import (
    RunLimits,
    RunnerSpec,
    complete_testcases,
    run_solution,
    _executable_form,
)

logger = logging.getLogger(__name__)

PERTURB = "perturb"
FILTER = "filter"
ANNOTATE = "annotate"
COMPLETE_TESTS = "complete-tests"
EVALUATE = "evaluate"
REPORT = "report"


class StageError(RuntimeError):
    pass


# === hashing and manifests ===

def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_dir(path: str) -> str:
    """Digest of a directory: file names and contents, order-independent."""
    digest = hashlib.sha256()
    for root, dirs, files in os.walk(path):
        dirs.sort()
        for name in sorted(files):
            full = os.path.join(root, name)
            rel = os.path.relpath(full, path)
            digest.update(rel.encode("utf-8") + b"\0")
            digest.update(sha256_file(full).encode("ascii") + b"\n")
    return digest.hexdigest()


def _hash_input(path: str) -> str:
    if os.path.isdir(path):
        return sha256_dir(path)
    return sha256_file(path)


def stage_dir(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, name)


def _manifest_path(out_dir: str, name: str) -> str:
    return os.path.join(stage_dir(out_dir, name), "manifest.json")


def read_manifest(out_dir: str, name: str) -> dict[str, Any] | None:
    path = _manifest_path(out_dir, name)
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def run_stage(
    name: str,
    cfg: RunConfig,
    out_dir: str,
    inputs: Mapping[str, str],
    build: Callable[[str], dict[str, str]],
    *,
    force: bool = False,
    echo: Callable[[str], None] = print,
) -> bool:
    """Run one stage unless its manifest is already current.

    ``inputs`` maps stable labels to content digests; ``build`` receives the
    stage directory and returns {output name: digest}. Returns True when the
    stage ran, False when it was skipped as up to date.
    """
    existing = read_manifest(out_dir, name)
    if (
        not force
        and existing is not None
        and existing.get("stage") == name
        and existing.get("config_hash") == cfg.config_hash
        and existing.get("inputs") == dict(inputs)
    ):
        echo(f"[{name}] up to date, skipping")
        return False
    sdir = stage_dir(out_dir, name)
    os.makedirs(sdir, exist_ok=True)
    outputs = build(sdir)
    manifest = {
        "stage": name,
        "version": __version__,
        "config_hash": cfg.config_hash,
        "inputs": dict(inputs),
        "outputs": outputs,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(_manifest_path(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    echo(f"[{name}] done")
    return True


def _out_digests(sdir: str, names: Iterable[str]) -> dict[str, str]:
    return {name: sha256_file(os.path.join(sdir, name)) for name in names}


def _write_json(path: str, obj: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


# === perturb ===

def run_perturb(
    cfg: RunConfig, out_dir: str, *, force: bool = False, workers: int | None = None,
    echo: Callable[[str], None] = print,
) -> None:
    problems = load_corpus(cfg.corpus_path, "problem")
    providers = cfg.providers()
    inputs: dict[str, str] = {"corpus": _hash_input(cfg.corpus_path)}
    for provider in providers:
        directory = getattr(provider, "directory", None)
        if directory:
            inputs[f"provider:{provider.provider_id}"] = _hash_input(directory)

    def build(sdir: str) -> dict[str, str]:
        sampler = cfg.sampler_config()
        template = cfg.prompt_template()
        all_candidates: list[CandidateVariant] = []
        failure_log: list[dict[str, Any]] = []
        for problem in problems:
            sampled, failures = sample_candidates(
                problem, providers, sampler, template,
                max_workers=workers or cfg.workers,
            )
            kept = dedup_candidates(sampled)
            all_candidates.extend(kept)
            failure_log.extend({"problem_id": problem.id, **f.to_json()} for f in failures)
            echo(
                f"[perturb] {problem.id}: {len(sampled)} parsed, "
                f"{len(kept)} after dedup, {len(failures)} failures"
            )
        save_corpus(all_candidates, os.path.join(sdir, "candidates.jsonl"))
        _write_json(os.path.join(sdir, "failures.json"), failure_log)
        return _out_digests(sdir, ["candidates.jsonl", "failures.json"])

    run_stage(PERTURB, cfg, out_dir, inputs, build, force=force, echo=echo)


# === filter ===

def run_filter(
    cfg: RunConfig, out_dir: str, *, force: bool = False,
    echo: Callable[[str], None] = print,
) -> None:
    candidates_path = os.path.join(stage_dir(out_dir, PERTURB), "candidates.jsonl")
    if not os.path.exists(candidates_path):
        raise StageError("filter needs perturb output; run the perturb stage first")
    inputs = {
        "corpus": _hash_input(cfg.corpus_path),
        "candidates": _hash_input(candidates_path),
    }

    def build(sdir: str) -> dict[str, str]:
        problems = {p.id: p for p in load_corpus(cfg.corpus_path, "problem")}
        candidates = load_corpus(candidates_path, "candidate")
        params = cfg.objective_params()
        by_parent: dict[str, list[CandidateVariant]] = {}
        for cand in candidates:
            by_parent.setdefault(cand.parent_id, []).append(cand)
        retained: list[CandidateVariant] = []
        for pid in problems:
            group = by_parent.get(pid, [])
            if not group:
                continue
            kept = epsilon_filter(group, problems[pid], params)
            # Postcondition check: recompute each retained distance rather
            # than trusting the filter's bookkeeping.
            for cand in kept:
                recomputed = normalized_levenshtein(
                    problems[pid].question_content, cand.question_content
                )
                if cand.dq != recomputed or recomputed > params.epsilon:
                    raise StageError(f"filter postcondition violated for {cand.id!r}")
            retained.extend(kept)
        if not retained:
            echo(
                "[filter] warning: no candidates within epsilon"
                f" ({params.epsilon}); downstream stages will be empty"
            )
        save_corpus(retained, os.path.join(sdir, "filtered.jsonl"))
        return _out_digests(sdir, ["filtered.jsonl"])

    run_stage(FILTER, cfg, out_dir, inputs, build, force=force, echo=echo)


# === annotation helpers shared by serve and auto modes ===

def make_smoke_runner(limits: RunLimits, registry: Mapping[str, RunnerSpec]):
    def smoke(solution: SourceCode, original: Problem):
        runnable = _executable_form(
            solution, original.tests.mode, original.metadata.get("entry_point")
        )
        return run_solution(runnable, original.tests.cases[0].input, limits, registry)

    return smoke


def make_solution_scorer(embedder, cache: EmbeddingCache | None):
    from .metrics import cosine_distance

    def score(solution: SourceCode, original: Problem) -> tuple[float, str]:
        if original.solution is None:
            raise ConfigError(f"original {original.id!r} has no reference solution to compare to")
        vectors = embed_batch([original.solution.body, solution.body], embedder, cache)
        return cosine_distance(vectors[0].values, vectors[1].values), embedder.provider_id

    return score


def build_store(cfg: RunConfig, out_dir: str, *, replay: bool) -> AnnotationStore:
    problems = {p.id: p for p in load_corpus(cfg.corpus_path, "problem")}
    sdir = stage_dir(out_dir, ANNOTATE)
    os.makedirs(sdir, exist_ok=True)
    log = EventLog(os.path.join(sdir, "events.jsonl"))
    cache = cfg.embedding_cache(out_dir)
    store = AnnotationStore(
        problems,
        log,
        trial_size=cfg.trial_size,
        params=cfg.objective_params(),
        smoke_runner=make_smoke_runner(cfg.limits(), cfg.registry()),
        solution_scorer=make_solution_scorer(cfg.embedder(), cache),
    )
    if replay:
        store.replay(log.read_all())
    return store


# === auto annotation (test mode): drives the real HTTP surface in-process ===

AUTO_ANNOTATORS = ("auto-1", "auto-2")


def _auto_solution_path(solutions_dir: str, cand: CandidateVariant) -> str | None:
    provider, _, index = cand.generator.rpartition(":")
    safe_parent = "".join(c if c.isalnum() or c in "._-" else "_" for c in cand.parent_id)
    path = os.path.join(solutions_dir, f"{safe_parent}__{provider}__{index}.py")
    return path if os.path.exists(path) else None


def run_annotate_auto(
    cfg: RunConfig, out_dir: str, *, force: bool = False,
    echo: Callable[[str], None] = print,
) -> None:
    filtered_path = os.path.join(stage_dir(out_dir, FILTER), "filtered.jsonl")
    if not os.path.exists(filtered_path):
        raise StageError("annotate needs filter output; run the filter stage first")
    solutions_dir = cfg.auto_solutions_dir()
    inputs = {
        "corpus": _hash_input(cfg.corpus_path),
        "filtered": _hash_input(filtered_path),
    }
    if solutions_dir:
        inputs["solutions"] = _hash_input(solutions_dir)

    def build(sdir: str) -> dict[str, str]:
        events_path = os.path.join(sdir, "events.jsonl")
        if os.path.exists(events_path):
            os.unlink(events_path)  # the stage rebuilds the campaign from scratch
        store = build_store(cfg, out_dir, replay=False)
        candidates = load_corpus(filtered_path, "candidate")
        for cand in candidates:
            store.enqueue(cand)
        by_id = {c.id: c for c in candidates}

        token = cfg.annot_token
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        app = create_app(store, token=token)

        async def drive() -> tuple[list[dict[str, Any]], dict[str, Any]]:
            resolved_ctf: list[str] = []
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://annotate.internal", headers=headers
            ) as client:
                for annotator in AUTO_ANNOTATORS:
                    while True:
                        resp = await client.get(
                            "/api/tasks/next", params={"annotator": annotator}
                        )
                        resp.raise_for_status()
                        task = resp.json()["task"]
                        if task is None:
                            break
                        cand = by_id[task["id"]]
                        has_solution = bool(
                            solutions_dir and _auto_solution_path(solutions_dir, cand)
                        )
                        verdict = {
                            "annotator": annotator,
                            "category": "ctf" if has_solution else "robust",
                            "solvable": True,
                            "is_ctf": has_solution,
                            "notes": "scripted verdict",
                        }
                        # task ids contain '#'; quote them or the path truncates
                        tid = urllib.parse.quote(task["id"], safe="")
                        vr = await client.post(f"/api/tasks/{tid}/verdict", json=verdict)
                        vr.raise_for_status()
                        state = vr.json()
                        if state["state"] == "resolved" and state["resolution_outcome"] == "ctf":
                            resolved_ctf.append(task["id"])
                for task_id in resolved_ctf:
                    path = _auto_solution_path(solutions_dir or "", by_id[task_id])
                    assert path is not None
                    with open(path, "r", encoding="utf-8") as fh:
                        body = fh.read()
                    sr = await client.post(
                        f"/api/tasks/{urllib.parse.quote(task_id, safe='')}/solution",
                        json={"language_tag": "python", "body": body},
                    )
                    if sr.status_code == 422:
                        echo(f"[annotate] warning: solution for {task_id} failed its smoke run")
                        continue
                    sr.raise_for_status()
                pairs_resp = (await client.get("/api/pairs")).json()["pairs"]
                progress_resp = (await client.get("/api/progress")).json()
            return pairs_resp, progress_resp

        pairs_json, progress = asyncio.run(drive())

        pairs = [pair_from_json(obj) for obj in pairs_json]
        save_corpus(pairs, os.path.join(sdir, "pairs.jsonl"))
        _write_json(os.path.join(sdir, "progress.json"), progress)
        echo(f"[annotate] {len(pairs)} pairs from {len(candidates)} candidates")
        outputs = ["pairs.jsonl", "progress.json"]
        if os.path.exists(events_path):
            outputs.append("events.jsonl")
        return _out_digests(sdir, outputs)

    run_stage(ANNOTATE, cfg, out_dir, inputs, build, force=force, echo=echo)


def export_annotation(
    cfg: RunConfig, out_dir: str, *, echo: Callable[[str], None] = print
) -> None:
    """Rebuild the store from the event log and write pairs for downstream
    stages. Used after a human campaign served by annotate-serve."""
    store = build_store(cfg, out_dir, replay=True)
    sdir = stage_dir(out_dir, ANNOTATE)
    pairs = store.pairs()
    save_corpus(pairs, os.path.join(sdir, "pairs.jsonl"))
    _write_json(os.path.join(sdir, "progress.json"), store.progress())
    filtered_path = os.path.join(stage_dir(out_dir, FILTER), "filtered.jsonl")
    inputs = {
        "corpus": _hash_input(cfg.corpus_path),
        "filtered": _hash_input(filtered_path) if os.path.exists(filtered_path) else "",
        "events": _hash_input(os.path.join(sdir, "events.jsonl"))
        if os.path.exists(os.path.join(sdir, "events.jsonl"))
        else "",
    }
    outputs = ["pairs.jsonl", "progress.json"]
    if os.path.exists(os.path.join(sdir, "events.jsonl")):
        outputs.append("events.jsonl")
    manifest = {
        "stage": ANNOTATE,
        "version": __version__,
        "config_hash": cfg.config_hash,
        "inputs": inputs,
        "outputs": _out_digests(sdir, outputs),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    with open(_manifest_path(out_dir, ANNOTATE), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    echo(f"[annotate] exported {len(pairs)} pairs")


# === complete-tests ===

def run_complete_tests(
    cfg: RunConfig, out_dir: str, *, force: bool = False,
    echo: Callable[[str], None] = print,
) -> None:
    pairs_path = os.path.join(stage_dir(out_dir, ANNOTATE), "pairs.jsonl")
    if not os.path.exists(pairs_path):
        raise StageError("complete-tests needs annotation output (pairs.jsonl)")
    inputs = {
        "corpus": _hash_input(cfg.corpus_path),
        "pairs": _hash_input(pairs_path),
    }

    def build(sdir: str) -> dict[str, str]:
        problems = {p.id: p for p in load_corpus(cfg.corpus_path, "problem")}
        pairs: list[CtfPair] = load_corpus(pairs_path, "pair")
        limits = cfg.limits()
        registry = cfg.registry()
        completed: list[CtfPair] = []
        for pair in pairs:
            original = problems.get(pair.original)
            if original is None:
                raise StageError(f"pair references unknown original {pair.original!r}")
            solution = pair.ctf_problem.solution
            if solution is None:
                raise StageError(f"pair {pair.ctf_problem.id!r} has no solution to run")
            suite = complete_testcases(
                original, solution, limits, registry,
                entry_point=pair.ctf_problem.metadata.get("entry_point"),
            )
            completed.append(
                dataclasses.replace(
                    pair, ctf_problem=dataclasses.replace(pair.ctf_problem, tests=suite)
                )
            )
        if not completed:
            echo("[complete-tests] warning: no pairs to complete")
        save_corpus(completed, os.path.join(sdir, "pairs_complete.jsonl"))
        return _out_digests(sdir, ["pairs_complete.jsonl"])

    run_stage(COMPLETE_TESTS, cfg, out_dir, inputs, build, force=force, echo=echo)


# === evaluate ===

def run_evaluate(
    cfg: RunConfig, out_dir: str, *, force: bool = False,
    echo: Callable[[str], None] = print,
) -> None:
    pairs_path = os.path.join(stage_dir(out_dir, COMPLETE_TESTS), "pairs_complete.jsonl")
    if not os.path.exists(pairs_path):
        raise StageError("evaluate needs complete-tests output")
    inputs = {
        "corpus": _hash_input(cfg.corpus_path),
        "pairs_complete": _hash_input(pairs_path),
    }

    def build(sdir: str) -> dict[str, str]:
        problems = {p.id: p for p in load_corpus(cfg.corpus_path, "problem")}
        pairs: list[CtfPair] = load_corpus(pairs_path, "pair")
        if not pairs:
            echo("[evaluate] warning: empty benchmark; nothing to evaluate")
            _write_json(os.path.join(sdir, "report.json"), [])
            with open(os.path.join(sdir, "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
                fh.write("model,ori_acc,ctf_acc,drop,pairs,errored\n")
            return _out_digests(sdir, ["report.json", "report.csv"])
        limits = cfg.limits()
        registry = cfg.registry()
        reports: list[EvalReport] = []
        for adapter in cfg.adapters(pairs, problems):
            report = evaluate_pairs(
                adapter, pairs, problems, limits, registry,
                include_divergence=cfg.include_divergence,
            )
            echo(
                f"[evaluate] {report.model_id}: ori {report.ori_acc:.3f}, "
                f"ctf {report.ctf_acc:.3f}, drop {report.drop:+.3f}"
            )
            reports.append(report)
        _write_json(os.path.join(sdir, "report.json"), [r.to_json() for r in reports])
        with open(os.path.join(sdir, "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_report(reports, "csv"))
        return _out_digests(sdir, ["report.json", "report.csv"])

    run_stage(EVALUATE, cfg, out_dir, inputs, build, force=force, echo=echo)


# === report ===

def run_report(
    cfg: RunConfig, out_dir: str, *, force: bool = False,
    echo: Callable[[str], None] = print,
) -> None:
    report_path = os.path.join(stage_dir(out_dir, EVALUATE), "report.json")
    if not os.path.exists(report_path):
        raise StageError("report needs evaluate output")
    inputs = {"report": _hash_input(report_path)}

    def build(sdir: str) -> dict[str, str]:
        with open(report_path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        reports = [EvalReport.from_json(obj) for obj in raw]
        text = render_report(reports, "table") if reports else "no pairs were evaluated\n"
        with open(os.path.join(sdir, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        echo(text.rstrip("\n"))
        return _out_digests(sdir, ["report.txt"])

    run_stage(REPORT, cfg, out_dir, inputs, build, force=force, echo=echo)


# === the whole pipeline ===

def run_pipeline(
    cfg: RunConfig, out_dir: str, *, force: bool = False, workers: int | None = None,
    test_mode: bool | None = None, echo: Callable[[str], None] = print,
) -> None:
    effective_test_mode = cfg.test_mode if test_mode is None else test_mode
    run_perturb(cfg, out_dir, force=force, workers=workers, echo=echo)
    run_filter(cfg, out_dir, force=force, echo=echo)
    if effective_test_mode:
        run_annotate_auto(cfg, out_dir, force=force, echo=echo)
    else:
        pairs_path = os.path.join(stage_dir(out_dir, ANNOTATE), "pairs.jsonl")
        if not os.path.exists(pairs_path):
            echo(
                "[pipeline] annotation queue is waiting on human verdicts.\n"
                "  Run `ctfkit annotate-serve --config ...` to serve the campaign,\n"
                "  then `ctfkit annotate-export --config ...` and re-run the pipeline."
            )
            return
    run_complete_tests(cfg, out_dir, force=force, echo=echo)
    run_evaluate(cfg, out_dir, force=force, echo=echo)
    run_report(cfg, out_dir, force=force, echo=echo)
