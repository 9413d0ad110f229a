"""Command-line entry point.

Subcommands wrap the module operations one-to-one: ingest, generate, judge,
agree, anonymize, label-topics, sample, serve, report. Exit codes: 0 success,
2 configuration or input error, 3 partial failure (some work completed, some
items failed).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import agreement, annosvc, corpus, curation, judge, pipelines, report, retrieval
from .config import ConfigError, RunConfig, load_config, write_manifest
from .gateway import Gateway, GatewayError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _scan_corpus(corpus_dir: Path) -> list[tuple[Path, corpus.VideoMeta]]:
    """All transcript files with their sidecars, sorted by filename."""
    if not corpus_dir.is_dir():
        raise ConfigError(f"corpus directory {corpus_dir} does not exist")
    found = []
    for path in sorted(corpus_dir.glob("*.txt")):
        meta = corpus.read_sidecar(path)  # raises FileUnreadable naming the sidecar
        found.append((path, meta))
    if not found:
        raise ConfigError(f"no .txt transcripts under {corpus_dir}")
    return found


def _gateway(cfg: RunConfig) -> Gateway:
    gw = Gateway(backoff_base=cfg.backoff_base)
    if cfg.max_concurrency is not None:
        for endpoint in [cfg.generator, cfg.embedder] + cfg.judges.judges:
            if endpoint is not None:
                endpoint.max_concurrency = min(endpoint.max_concurrency, cfg.max_concurrency)
    return gw


def cmd_ingest(args) -> int:
    entries = _scan_corpus(Path(args.input))
    total_lines = 0
    for path, meta in entries:
        transcript = corpus.ingest_transcript(path, meta)
        total_lines += len(transcript.lines)
        print(f"{meta.video_id}\t{meta.language}\t{len(transcript.lines)} lines\t{path.name}")
    print(f"ok: {len(entries)} transcripts, {total_lines} utterances")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    if cfg.generator is None:
        raise ConfigError("config defines no [endpoint.generator]")
    if args.pipeline == "rag" and cfg.embedder is None:
        raise ConfigError("the rag pipeline needs an [endpoint.embedder]")
    cfg.pipeline.pipeline = args.pipeline
    cfg.pipeline.prompt_templates = cfg.templates()

    entries = _scan_corpus(Path(args.input))
    gw = _gateway(cfg)
    all_pairs: list[corpus.QAPair] = []
    failures: list[tuple[str, str]] = []
    for path, meta in entries:
        try:
            transcript = corpus.ingest_transcript(path, meta)
            if args.pipeline == "single":
                pairs = pipelines.run_single_agent(transcript, cfg.pipeline, gw, cfg.generator)
            elif args.pipeline == "dual":
                pairs = pipelines.run_dual_agent(transcript, cfg.pipeline, gw, cfg.generator)
            elif args.pipeline == "rag":
                chunks = retrieval.chunk_transcript(transcript, cfg.index)
                idx = retrieval.build_index(chunks, gw, cfg.embedder, cfg.index)
                pairs = pipelines.run_rag(transcript, cfg.pipeline, gw, cfg.generator, idx)
            else:
                pairs = pipelines.run_multi_agent(transcript, cfg.pipeline, gw, cfg.generator)
            all_pairs.extend(pairs)
        except (corpus.CorpusError, pipelines.PipelineError, GatewayError,
                retrieval.RetrievalError) as exc:
            failures.append((meta.video_id, str(exc)))

    stats = corpus.export_dataset(all_pairs, args.output)
    write_manifest(cfg, f"generate --pipeline {args.pipeline}", args.output)
    print(json.dumps(stats.as_dict(), indent=2, ensure_ascii=False))
    if failures:
        print(f"{len(failures)} video(s) failed:", file=sys.stderr)
        for video_id, reason in failures:
            print(f"  {video_id}: {reason}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_judge(args) -> int:
    cfg = load_config(args.config)
    if not cfg.judges.judges:
        raise ConfigError("config defines no [[judges]]")
    pairs = [p for p in corpus.load_dataset(args.pairs) if p.status == "selected"]
    gw = _gateway(cfg)
    metrics = list(judge.METRICS)
    if args.metrics:
        wanted = args.metrics.split(",")
        unknown = set(wanted) - set(judge.METRIC_IDS)
        if unknown:
            raise ConfigError(f"unknown metrics: {sorted(unknown)}")
        metrics = [judge.METRICS_BY_ID[m] for m in wanted]
    records, summary = judge.judge_dataset(pairs, metrics, cfg.judges, gw, args.output)
    write_manifest(cfg, "judge", args.output)
    print(
        f"records: {len(records)} total, {summary.completed} new, "
        f"{summary.skipped_existing} already present, {len(summary.failed)} failed"
    )
    if summary.failed:
        for pair_id, metric, judge_name, reason in summary.failed[:20]:
            print(f"  failed {pair_id}/{metric}/{judge_name}: {reason}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_agree(args) -> int:
    records = judge.load_records(args.records)
    pairs = {p.pair_id: p for p in corpus.load_dataset(args.pairs)} if args.pairs else {}
    facet = args.facet.split(",")
    rows = agreement.facet_agreement(records, facet, args.comparison, pairs)
    out = Path(args.output)
    out.with_suffix(".csv").write_text(agreement.facet_rows_to_csv(rows, facet), encoding="utf-8")
    out.with_suffix(".json").write_text(agreement.facet_rows_to_json(rows), encoding="utf-8")
    print(f"{len(rows)} facet cells -> {out.with_suffix('.csv')}")
    return EXIT_OK


def cmd_anonymize(args) -> int:
    cfg = load_config(args.config) if args.config else None
    gw = _gateway(cfg) if cfg else None
    ner = cfg.generator if (cfg and args.use_services) else None
    entries = _scan_corpus(Path(args.input))
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    audit: dict[str, list[curation.PiiSpan]] = {}
    for path, meta in entries:
        text = path.read_text(encoding="utf-8")
        redacted, spans = curation.anonymize(text, gw=gw, ner_endpoint=ner)
        (out_dir / path.name).write_text(redacted, encoding="utf-8")
        sidecar = path.with_suffix(".meta.json")
        (out_dir / sidecar.name).write_text(sidecar.read_text(encoding="utf-8"), encoding="utf-8")
        audit[meta.video_id] = spans
    curation.write_audit_log(audit, out_dir / "pii_audit.jsonl")
    print(f"redacted {len(entries)} transcripts -> {out_dir}")
    return EXIT_OK


def cmd_label_topics(args) -> int:
    cfg = load_config(args.config)
    if cfg.generator is None:
        raise ConfigError("config defines no [endpoint.generator]")
    pairs = corpus.load_dataset(args.pairs)
    gw = _gateway(cfg)
    labeled, queued = curation.label_topics(pairs, gw, cfg.generator, args.review)
    corpus.export_dataset(pairs, args.output)
    print(f"labeled {len(labeled)}, queued {len(queued)} for review -> {args.review}")
    return EXIT_PARTIAL if queued else EXIT_OK


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    if cfg.sampling is None:
        raise ConfigError("config defines no [sampling] plan")
    pairs = corpus.load_dataset(args.pairs)
    sampled = curation.sample_for_human_eval(pairs, cfg.sampling)
    curation.write_sample(sampled, args.output)
    write_manifest(cfg, "sample", args.output)
    slots = sum(len(s.raters) for s in sampled)
    print(f"sampled {len(sampled)} pairs, {slots} rating slots -> {args.output}")
    return EXIT_OK


def cmd_serve(args) -> int:
    sampled = curation.load_sample(args.sample)
    pairs = {p.pair_id: p for p in corpus.load_dataset(args.pairs)}
    assignments = annosvc.build_assignments(sampled)
    store = annosvc.RecordStore(args.store)
    app = annosvc.build_app(assignments, pairs, store, ui_dir=args.ui)
    print(f"serving {len(assignments)} annotators on port {args.port}")
    annosvc.serve(app, host=args.host, port=args.port)
    return EXIT_OK


def cmd_report(args) -> int:
    records = judge.load_records(args.records)
    pairs = {p.pair_id: p for p in corpus.load_dataset(args.pairs)} if args.pairs else {}
    group_by = args.group_by.split(",")
    table = report.build_report(records, group_by, pairs)
    text = report.table_to_text(table)
    if args.output:
        out = Path(args.output)
        out.with_suffix(".csv").write_text(report.table_to_csv(table), encoding="utf-8")
        out.with_suffix(".txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guideqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a transcript corpus")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="run a QA-generation pipeline over a corpus")
    p.add_argument("--pipeline", choices=corpus.PIPELINES, required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("judge", help="score a dataset with the judge registry")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--metrics", default="")
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("agree", help="compute inter-rater agreement per facet")
    p.add_argument("--records", required=True)
    p.add_argument("--pairs", default="")
    p.add_argument("--facet", default="metric")
    p.add_argument("--comparison", choices=["human_human", "llm_vs_human"], default="human_human")
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("anonymize", help="redact PII from a transcript corpus")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--config", default="")
    p.add_argument("--use-services", action="store_true")
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("label-topics", help="assign the six mentorship topics")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--review", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_label_topics)

    p = sub.add_parser("sample", help="draw the balanced human-evaluation sample")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--sample", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--ui", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="mean-score tables per facet")
    p.add_argument("--records", required=True)
    p.add_argument("--pairs", default="")
    p.add_argument("--group-by", dest="group_by", default="pipeline,metric")
    p.add_argument("--out", dest="output", default="")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, corpus.FileUnreadable, curation.InsufficientPairs) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except corpus.CorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
