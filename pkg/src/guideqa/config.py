"""Run configuration: one TOML file wires endpoints, pipeline parameters,
the judge registry, and the sampling plan.

String values may interpolate environment variables as ${VAR}; secrets stay
out of the file. Every command records a manifest (config hash, seed,
template hashes, endpoint names) next to its outputs.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .curation import SamplingPlan
from .gateway import EndpointConfig
from .judge import JudgeRegistry
from .pipelines import PipelineConfig
from .prompts import PromptLibrary
from .retrieval import IndexConfig


class ConfigError(Exception):
    pass


_ENV_REF = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate(value):
    if isinstance(value, str):
        def repl(m):
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} referenced but not set")
            return os.environ[name]

        return _ENV_REF.sub(repl, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


@dataclass
class RunConfig:
    seed: int = 0
    corpus_dir: Path = Path("corpus")
    output_dir: Path = Path("out")
    template_dir: Optional[Path] = None
    record_store: Path = Path("out/scores.jsonl")
    generator: Optional[EndpointConfig] = None
    embedder: Optional[EndpointConfig] = None
    judges: JudgeRegistry = field(default_factory=lambda: JudgeRegistry(judges=[]))
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    sampling: Optional[SamplingPlan] = None
    backoff_base: float = 1.0
    max_concurrency: Optional[int] = None
    raw: dict = field(default_factory=dict)

    def templates(self) -> PromptLibrary:
        if self.pipeline.prompt_templates is None:
            self.pipeline.prompt_templates = PromptLibrary.load(self.template_dir)
        return self.pipeline.prompt_templates

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def manifest(self, command: str) -> dict:
        endpoints = [e.name for e in (self.generator, self.embedder) if e is not None]
        endpoints += [j.name for j in self.judges.judges]
        return {
            "command": command,
            "config_hash": self.config_hash(),
            "seed": self.seed,
            "template_hashes": self.templates().digest(),
            "endpoints": endpoints,
        }


def _endpoint(section: dict, name: str) -> EndpointConfig:
    try:
        return EndpointConfig(
            name=section.get("name", name),
            base_url=section["base_url"],
            model_id=section["model_id"],
            api_key_env=section.get("api_key_env", ""),
            max_concurrency=section.get("max_concurrency", 4),
            timeout_seconds=section.get("timeout_seconds", 60.0),
            max_retries=section.get("max_retries", 3),
        )
    except KeyError as exc:
        raise ConfigError(f"endpoint {name!r} is missing {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"endpoint {name!r}: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    data = _interpolate(data)

    cfg = RunConfig(raw=data)
    cfg.seed = int(data.get("seed", 0))

    paths = data.get("paths", {})
    base = path.parent
    cfg.corpus_dir = base / paths.get("corpus_dir", "corpus")
    cfg.output_dir = base / paths.get("output_dir", "out")
    cfg.record_store = base / paths.get("record_store", "out/scores.jsonl")
    if paths.get("template_dir"):
        cfg.template_dir = base / paths["template_dir"]

    endpoints = data.get("endpoint", {})
    if "generator" in endpoints:
        cfg.generator = _endpoint(endpoints["generator"], "generator")
    if "embedder" in endpoints:
        cfg.embedder = _endpoint(endpoints["embedder"], "embedder")

    judges = [_endpoint(j, j.get("name", f"judge{i}")) for i, j in enumerate(data.get("judges", []))]
    try:
        cfg.judges = JudgeRegistry(judges=judges)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    pl = data.get("pipeline", {})
    try:
        cfg.pipeline = PipelineConfig(
            pipeline=pl.get("pipeline", "single"),
            target_questions=pl.get("target_questions", 20),
            brainstorm_per_segment=pl.get("brainstorm_per_segment", 8),
            rag_top_k=pl.get("rag_top_k", 5),
            max_context_chars=pl.get("max_context_chars", 4_000_000),
        )
        idx = data.get("index", {})
        cfg.index = IndexConfig(
            chunk_target_chars=idx.get("chunk_target_chars", 1500),
            chunk_overlap_chars=idx.get("chunk_overlap_chars", 200),
            top_k=idx.get("top_k", 5),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sampling = data.get("sampling")
    if sampling:
        try:
            cfg.sampling = SamplingPlan(
                languages=list(sampling["languages"]),
                annotators={k: list(v) for k, v in sampling.get("annotators", {}).items()},
                videos_per_language=sampling.get("videos_per_language", 5),
                pairs_per_cell=sampling.get("pairs_per_cell", 3),
                raters_per_pair=sampling.get("raters_per_pair", 3),
                seed=sampling.get("seed", cfg.seed),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"sampling plan: {exc}") from exc

    gw = data.get("gateway", {})
    cfg.backoff_base = gw.get("backoff_base", 1.0)
    if "max_concurrency" in gw:
        cfg.max_concurrency = int(gw["max_concurrency"])
    return cfg


def write_manifest(cfg: RunConfig, command: str, out_path: str | Path) -> Path:
    manifest_path = Path(str(out_path) + ".manifest.json")
    manifest_path.write_text(
        json.dumps(cfg.manifest(command), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return manifest_path
