"""Command line interface.

Batch stages (perturb, filter, complete-tests, evaluate, report, pipeline)
call the library directly and are guarded by stage manifests. The annotation
campaign runs as an HTTP service (`annotate-serve`); in test mode the
pipeline drives that same HTTP surface in-process with scripted annotators.
Dataset curation lives under the `select` group.
"""

from __future__ import annotations

import json
import os
import sys

import click

from . import __version__, stages
from .config import ConfigError, RunConfig
from .domain import load_corpus, save_corpus
from .embeddings import provider_from_env, EmbeddingCache
from .selection import (
    SelectionError,
    decontaminate,
    dimension_diagnostics,
    ensure_embeddings,
    kcenter_greedy,
    merge_datasets,
    remove_outliers,
    render_diagnostics,
    topk_by_difficulty,
)


def _load_config(path: str) -> RunConfig:
    try:
        return RunConfig.load(path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from None


def _resolve_out(cfg: RunConfig, out: str | None) -> str:
    out_dir = os.path.abspath(out) if out else cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _config_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="Run configuration (JSON).")(fn)
    fn = click.option("--out", "out", default=None,
                      type=click.Path(file_okay=False),
                      help="Output root; defaults to the config's out_dir.")(fn)
    return fn


def _force_option(fn):
    return click.option("--force", is_flag=True,
                        help="Re-run even when the stage manifest is current.")(fn)


@click.group()
@click.version_option(__version__, prog_name="ctfkit")
def main() -> None:
    """Counterfactual problem pipeline: generation, filtering, annotation,
    test reconstruction, evaluation, and dataset curation."""


@main.command()
@_config_options
@_force_option
@click.option("--workers", type=int, default=None,
              help="Concurrent provider calls (default from config).")
def perturb(config_path: str, out: str | None, force: bool, workers: int | None) -> None:
    """Sample counterfactual rewrites of every corpus problem."""
    cfg = _load_config(config_path)
    _run(stages.run_perturb, cfg, _resolve_out(cfg, out), force=force, workers=workers)


@main.command("filter")
@_config_options
@_force_option
def filter_cmd(config_path: str, out: str | None, force: bool) -> None:
    """Keep candidates whose description distance stays within epsilon."""
    cfg = _load_config(config_path)
    _run(stages.run_filter, cfg, _resolve_out(cfg, out), force=force)


@main.command("annotate-serve")
@_config_options
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True, type=int)
@click.option("--static-dir", default=None, type=click.Path(file_okay=False, exists=True),
              help="Serve a built web client from this directory at /.")
def annotate_serve(config_path: str, out: str | None, host: str, port: int,
                   static_dir: str | None) -> None:
    """Serve the annotation campaign over HTTP.

    Replays the campaign's event log, enqueues any newly filtered candidates,
    and serves the task queue. Auth uses the bearer token from the config's
    annotation.token or CTF_ANNOT_TOKEN; without either the API is open.
    """
    import uvicorn

    from .service import create_app

    cfg = _load_config(config_path)
    out_dir = _resolve_out(cfg, out)
    try:
        store = stages.build_store(cfg, out_dir, replay=True)
        known = {task.id for task in store.tasks()}
        filtered_path = os.path.join(stages.stage_dir(out_dir, stages.FILTER), "filtered.jsonl")
        added = 0
        if os.path.exists(filtered_path):
            for cand in load_corpus(filtered_path, "candidate"):
                if cand.id not in known:
                    store.enqueue(cand)
                    added += 1
        elif not known:
            raise click.ClickException(
                "no event log and no filter output; run the filter stage first"
            )
    except stages.StageError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(f"serving {len(store.tasks())} tasks ({added} newly enqueued) on {host}:{port}")
    if static_dir is None:
        default_static = os.path.join(os.getcwd(), "frontend", "dist")
        if os.path.isdir(default_static):
            static_dir = default_static
    app = create_app(store, token=cfg.annot_token, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command("annotate-export")
@_config_options
def annotate_export(config_path: str, out: str | None) -> None:
    """Write pairs.jsonl and progress.json from the annotation event log."""
    cfg = _load_config(config_path)
    _run(stages.export_annotation, cfg, _resolve_out(cfg, out))


@main.command("complete-tests")
@_config_options
@_force_option
def complete_tests(config_path: str, out: str | None, force: bool) -> None:
    """Rebuild pair test suites: inherited inputs, re-executed outputs."""
    cfg = _load_config(config_path)
    _run(stages.run_complete_tests, cfg, _resolve_out(cfg, out), force=force)


@main.command()
@_config_options
@_force_option
def evaluate(config_path: str, out: str | None, force: bool) -> None:
    """Judge the configured adapters on every original/counterfactual pair."""
    cfg = _load_config(config_path)
    _run(stages.run_evaluate, cfg, _resolve_out(cfg, out), force=force)


@main.command()
@_config_options
@_force_option
def report(config_path: str, out: str | None, force: bool) -> None:
    """Render the evaluation report as an aligned text table."""
    cfg = _load_config(config_path)
    _run(stages.run_report, cfg, _resolve_out(cfg, out), force=force)


@main.command()
@_config_options
@_force_option
@click.option("--workers", type=int, default=None)
@click.option("--test-mode/--no-test-mode", "test_mode", default=None,
              help="Override the config's test_mode flag.")
def pipeline(config_path: str, out: str | None, force: bool,
             workers: int | None, test_mode: bool | None) -> None:
    """Run every stage in order.

    In test mode the annotation stage is driven by scripted annotators over
    the real HTTP API; otherwise the pipeline pauses until a human campaign
    has been served and exported.
    """
    cfg = _load_config(config_path)
    _run(stages.run_pipeline, cfg, _resolve_out(cfg, out),
         force=force, workers=workers, test_mode=test_mode)


def _run(fn, cfg: RunConfig, out_dir: str, **kwargs) -> None:
    try:
        fn(cfg, out_dir, echo=click.echo, **kwargs)
    except (stages.StageError, ConfigError) as exc:
        raise click.ClickException(str(exc)) from None


# === dataset curation ===

@main.group()
def select() -> None:
    """Curate instruction datasets (k-center selection, top-k, merge,
    decontamination, diagnostics)."""


def _embedding_context(config_path: str | None, cache_path: str | None):
    if config_path:
        cfg = _load_config(config_path)
        embedder = cfg.embedder()
        cache = cfg.embedding_cache(cfg.out_dir) if cache_path is None else EmbeddingCache(cache_path)
        return embedder, cache
    return provider_from_env(), (EmbeddingCache(cache_path) if cache_path else None)


def _load_instruct(path: str):
    return load_corpus(path, "instruct")


_embed_opts = [
    click.option("--config", "config_path", default=None,
                 type=click.Path(exists=True, dir_okay=False),
                 help="Optional run config supplying the embedding provider."),
    click.option("--cache", "cache_path", default=None, type=click.Path(dir_okay=False),
                 help="Embedding cache file (JSONL)."),
]


def _with_embed_opts(fn):
    for opt in reversed(_embed_opts):
        fn = opt(fn)
    return fn


@select.command()
@click.option("--base", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Records already in the training mix (the initial centers).")
@click.option("--pool", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Candidate records to select from.")
@click.option("--tau", required=True, type=int, help="How many records to select.")
@click.option("--outlier-fraction", default=0.01, show_default=True, type=float,
              help="Fraction of the pool dropped as outliers before selection; 0 disables.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--merged", "merged_path", default=None, type=click.Path(dir_okay=False),
              help="Also write base + selections as one tagged dataset.")
@_with_embed_opts
def kcenter(base: str, pool: str, tau: int, outlier_fraction: float, out_path: str,
            merged_path: str | None, config_path: str | None, cache_path: str | None) -> None:
    """Greedy farthest-point selection of pool records against a base set."""
    embedder, cache = _embedding_context(config_path, cache_path)
    try:
        base_records = ensure_embeddings(_load_instruct(base), embedder, cache)
        pool_records = ensure_embeddings(_load_instruct(pool), embedder, cache)
        removed = []
        if outlier_fraction > 0:
            pool_records, removed = remove_outliers(pool_records, base_records, outlier_fraction)
        picks = kcenter_greedy(base_records, pool_records, min(tau, len(pool_records)))
        save_corpus(picks, out_path)
        if merged_path:
            save_corpus(merge_datasets(base_records, picks), merged_path)
    except SelectionError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(
        f"selected {len(picks)} of {len(pool_records)} pool records"
        f" ({len(removed)} outliers removed) -> {out_path}"
    )


@select.command()
@click.option("--pool", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def topk(pool: str, k: int, out_path: str) -> None:
    """Keep the k hardest records by difficulty score."""
    try:
        picks = topk_by_difficulty(_load_instruct(pool), k)
        save_corpus(picks, out_path)
    except SelectionError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(f"kept {len(picks)} records -> {out_path}")


@select.command()
@click.option("--base", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--selected", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
def merge(base: str, selected: str, out_path: str) -> None:
    """Concatenate base and selected records with origin tags."""
    try:
        merged = merge_datasets(_load_instruct(base), _load_instruct(selected))
        save_corpus(merged, out_path)
    except SelectionError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(f"merged {len(merged)} records -> {out_path}")


@select.command("decontaminate")
@click.option("--pool", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--benchmark", "benchmarks", required=True, multiple=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Benchmark corpus to scrub against; repeatable.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", required=True, type=click.Path(dir_okay=False),
              help="JSON log of every removed record and why.")
@click.option("--threshold", default=0.95, show_default=True, type=float,
              help="Cosine similarity above which a record is contaminated.")
@click.option("--exact-only", is_flag=True,
              help="Skip the similarity matcher; match on normalized text only.")
@_with_embed_opts
def decontaminate_cmd(pool: str, benchmarks: tuple[str, ...], out_path: str, log_path: str,
                      threshold: float, exact_only: bool,
                      config_path: str | None, cache_path: str | None) -> None:
    """Remove pool records that leak benchmark problems."""
    bench = []
    for path in benchmarks:
        bench.extend(load_corpus(path, "problem"))
    embedder, cache = (None, None) if exact_only else _embedding_context(config_path, cache_path)
    try:
        pool_records = _load_instruct(pool)
        if embedder is not None:
            pool_records = ensure_embeddings(pool_records, embedder, cache)
        kept, removal_log = decontaminate(
            pool_records, bench, threshold=threshold, embedder=embedder, cache=cache
        )
        save_corpus(kept, out_path)
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(removal_log, fh, ensure_ascii=False, indent=2)
            fh.write("\n")
    except SelectionError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(f"kept {len(kept)}, removed {len(removal_log)} -> {out_path}")


@select.command()
@click.option("--seeds", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--derived", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", default=None, type=click.Path(dir_okay=False),
              help="Also write the report as JSON.")
@_with_embed_opts
def diagnostics(seeds: str, derived: str, out_path: str | None,
                config_path: str | None, cache_path: str | None) -> None:
    """Percentile profile of similarity and difficulty shift across pairs."""
    embedder, cache = _embedding_context(config_path, cache_path)
    try:
        seed_records = ensure_embeddings(_load_instruct(seeds), embedder, cache)
        derived_records = ensure_embeddings(_load_instruct(derived), embedder, cache)
        rep = dimension_diagnostics(seed_records, derived_records)
    except SelectionError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(render_diagnostics(rep.similarity, rep.difficulty_diff), nl=False)
    click.echo(f"pairs: {rep.pair_count}")
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(rep.to_json(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")


if __name__ == "__main__":
    sys.exit(main())
