"""Run configuration: one JSON file drives a whole pipeline run.

Relative paths inside the file resolve against the file's own directory, so
a config can travel with its fixtures. The raw file bytes are hashed into
every stage manifest; editing the config invalidates downstream stages.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .domain import CtfPair, Problem, SourceCode
from .embeddings import (
    Embedder,
    EmbeddingCache,
    FallbackEmbedder,
    RemoteEmbedder,
    ENV_EMBED_URL,
)
from .evaluation import (
    HttpModelAdapter,
    ModelAdapter,
    ScriptedAdapter,
    mimic_original_adapter,
    per_side_reference_adapter,
)
from .metrics import ObjectiveParams
from .perturbation import (
    HttpTextProvider,
    PromptTemplate,
    SamplerConfig,
    ScriptedProvider,
    TextProvider,
    default_template,
)
from .testkit import RunLimits, RunnerSpec, build_registry


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: dict[str, Any]
    path: str
    base_dir: str
    config_hash: str

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> "RunConfig":
        path = os.path.abspath(os.fspath(path))
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            raw = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must contain a JSON object")
        return cls(
            raw=raw,
            path=path,
            base_dir=os.path.dirname(path),
            config_hash=hashlib.sha256(blob).hexdigest(),
        )

    # --- path helpers ---

    def resolve(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    @property
    def out_dir(self) -> str:
        return self.resolve(str(self.raw.get("out_dir", "out")))

    @property
    def corpus_path(self) -> str:
        corpus = self.raw.get("corpus")
        if not corpus:
            raise ConfigError("config is missing 'corpus'")
        return self.resolve(str(corpus))

    @property
    def test_mode(self) -> bool:
        return bool(self.raw.get("test_mode", False))

    @property
    def workers(self) -> int:
        return int(self.raw.get("workers", 1))

    # --- section builders ---

    def objective_params(self) -> ObjectiveParams:
        return ObjectiveParams.from_json(self.raw.get("objective", {}))

    def sampler_config(self) -> SamplerConfig:
        section = self.raw.get("sampler", {})
        return SamplerConfig(
            samples_per_provider=int(section.get("samples_per_provider", 5)),
            options=dict(section.get("options", {})),
        )

    def prompt_template(self) -> PromptTemplate:
        section = self.raw.get("prompt", {})
        body_path = section.get("template_file")
        if body_path:
            with open(self.resolve(str(body_path)), "r", encoding="utf-8") as fh:
                return PromptTemplate(body=fh.read())
        return default_template()

    def providers(self) -> list[TextProvider]:
        entries = self.raw.get("providers", [])
        if not entries:
            raise ConfigError("config defines no providers")
        out: list[TextProvider] = []
        for entry in entries:
            kind = entry.get("kind")
            if kind == "scripted":
                out.append(
                    ScriptedProvider(
                        self.resolve(str(entry["directory"])),
                        provider_id=str(entry.get("id", "scripted")),
                    )
                )
            elif kind == "http":
                if self.test_mode:
                    raise ConfigError("test mode forbids http providers")
                out.append(
                    HttpTextProvider(
                        url=str(entry["url"]),
                        provider_id=str(entry.get("id", entry["url"])),
                        options=dict(entry.get("options", {})),
                    )
                )
            else:
                raise ConfigError(f"unknown provider kind {kind!r}")
        return out

    def limits(self) -> RunLimits:
        section = self.raw.get("limits", {})
        return RunLimits(
            wall_time_s=float(section.get("wall_time_s", 10.0)),
            memory_bytes=int(section.get("memory_bytes", 512 * 1024 * 1024)),
            output_cap_bytes=int(section.get("output_cap_bytes", 1024 * 1024)),
        )

    def registry(self) -> dict[str, RunnerSpec]:
        return build_registry(self.raw.get("runners"))

    def embedder(self) -> Embedder:
        section = self.raw.get("embeddings", {})
        url = section.get("url") or os.environ.get(ENV_EMBED_URL)
        if url and not self.test_mode:
            return RemoteEmbedder(url=str(url))
        dim = section.get("dim")
        return FallbackEmbedder(dim=None if dim is None else int(dim))

    def embedding_cache(self, out_dir: str) -> EmbeddingCache:
        section = self.raw.get("embeddings", {})
        name = str(section.get("cache", "embeddings-cache.jsonl"))
        path = name if os.path.isabs(name) else os.path.join(out_dir, name)
        return EmbeddingCache(path)

    # --- annotation section ---

    @property
    def trial_size(self) -> int:
        return int(self.raw.get("annotation", {}).get("trial_size", 10))

    @property
    def annot_token(self) -> str | None:
        token = self.raw.get("annotation", {}).get("token")
        return None if token is None else str(token)

    def auto_solutions_dir(self) -> str | None:
        section = self.raw.get("annotation", {})
        path = section.get("auto_solutions")
        return None if path is None else self.resolve(str(path))

    # --- evaluation section ---

    def adapters(
        self, pairs: Sequence[CtfPair], originals: Mapping[str, Problem]
    ) -> list[ModelAdapter]:
        entries = self.raw.get("evaluation", {}).get("adapters")
        if entries is None:
            entries = [{"kind": "mimic-original"}, {"kind": "reference"}]
        out: list[ModelAdapter] = []
        for entry in entries:
            kind = entry.get("kind")
            if kind == "mimic-original":
                out.append(mimic_original_adapter(pairs, originals,
                                                  adapter_id=str(entry.get("id", "mimic-original"))))
            elif kind == "reference":
                out.append(per_side_reference_adapter(pairs, originals,
                                                      adapter_id=str(entry.get("id", "reference"))))
            elif kind == "scripted":
                directory = self.resolve(str(entry["directory"]))
                programs = {}
                for name in sorted(os.listdir(directory)):
                    if name.endswith(".py"):
                        with open(os.path.join(directory, name), "r", encoding="utf-8") as fh:
                            programs[name[:-3]] = SourceCode(language_tag="python", body=fh.read())
                out.append(ScriptedAdapter(str(entry.get("id", "scripted")), programs))
            elif kind == "http":
                if self.test_mode:
                    raise ConfigError("test mode forbids http adapters")
                out.append(HttpModelAdapter(url=str(entry["url"]), adapter_id=str(entry["id"])))
            else:
                raise ConfigError(f"unknown adapter kind {kind!r}")
        return out

    @property
    def include_divergence(self) -> bool:
        return bool(self.raw.get("evaluation", {}).get("include_divergence", False))
