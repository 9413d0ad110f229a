"""Seven-metric Likert rubric and LLM-judge orchestration.

Every rater, human or model, scores the same seven statements on a 1-5
scale. Judges are plain chat endpoints listed in a registry file; each
(pair, metric, judge) cell is one deterministic temperature-0 call that must
come back as a single integer.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Optional

from .corpus import QAPair
from .gateway import ChatRequest, EndpointConfig, Gateway, GatewayError
from . import structparse

log = logging.getLogger(__name__)

LIKERT_LEGEND = (
    "1 - Strongly Disagree\n"
    "2 - Disagree\n"
    "3 - Neutral\n"
    "4 - Agree\n"
    "5 - Strongly Agree"
)

JUDGE_SYSTEM = "You are an impartial evaluator of question-answer pairs."


@dataclass(frozen=True)
class Metric:
    id: str
    statement: str
    target: str  # question | answer | pair


METRICS = (
    Metric(
        "q_fluency",
        "The question is grammatically correct and free of language errors.",
        "question",
    ),
    Metric(
        "a_fluency",
        "The answer is grammatically correct and free of language errors.",
        "answer",
    ),
    Metric(
        "q_clarity",
        "The question is easy to understand, specific, and unambiguous.",
        "question",
    ),
    Metric(
        "a_clarity",
        "The answer is easy to understand, specific, and unambiguous.",
        "answer",
    ),
    Metric(
        "qa_alignment",
        "The answer directly corresponds to what the question asks. "
        "The question-answer pair demonstrates proper alignment, "
        "where the answer adequately satisfies the question.",
        "pair",
    ),
    Metric(
        "q_mentorship",
        "The question provides learning, guidance, advice, or insights "
        "that would benefit from mentor expertise.",
        "question",
    ),
    Metric(
        "a_mentorship",
        "The answer provides guidance, wisdom, practical advice, or insights "
        "that help the reader learn or grow.",
        "answer",
    ),
)

METRIC_IDS = tuple(m.id for m in METRICS)
METRICS_BY_ID = {m.id: m for m in METRICS}


@dataclass
class ScoreRecord:
    pair_id: str
    metric: str
    rater_id: str
    rater_kind: str  # llm | human
    score: int
    timestamp: float = 0.0

    def __post_init__(self):
        if self.metric not in METRICS_BY_ID:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.rater_kind not in ("llm", "human"):
            raise ValueError(f"unknown rater kind {self.rater_kind!r}")
        if not 1 <= self.score <= 5:
            raise ValueError("score must be in 1..5")

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "ScoreRecord":
        return cls(**json.loads(line))


@dataclass
class JudgeRegistry:
    judges: list[EndpointConfig]

    def __post_init__(self):
        names = [j.name for j in self.judges]
        if len(names) != len(set(names)):
            raise ValueError("judge names must be unique")

    @classmethod
    def from_file(cls, path: str | Path) -> "JudgeRegistry":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(judges=[EndpointConfig(**entry) for entry in data["judges"]])


def metric_prompt(pair: QAPair, metric: Metric) -> str:
    """User message for one judging call: rubric statement, the content the
    metric targets, the Likert legend, and the single-integer instruction."""
    parts = [f"Statement: {metric.statement}", ""]
    if metric.target in ("question", "pair"):
        parts.append(f"Question: {pair.question}")
    if metric.target in ("answer", "pair"):
        parts.append(f"Answer: {pair.answer}")
    parts += [
        "",
        "Rate how much you agree with the statement about the content above:",
        LIKERT_LEGEND,
        "",
        "Respond with a single integer from 1 to 5 and nothing else.",
    ]
    return "\n".join(parts)


def judge_pair(
    pair: QAPair, metric: Metric, judge: EndpointConfig, gw: Gateway
) -> Optional[ScoreRecord]:
    """Score one pair on one metric with one judge; one parse retry, then the
    cell is skipped (returns None) rather than poisoning the run."""
    request = ChatRequest(
        system=JUDGE_SYSTEM, user=metric_prompt(pair, metric), temperature=0.0
    )
    for _ in range(2):
        reply = gw.chat(judge, request)
        try:
            score = structparse.parse_int_score(reply, 1, 5)
        except structparse.NoNumberFound:
            continue
        return ScoreRecord(
            pair_id=pair.pair_id,
            metric=metric.id,
            rater_id=judge.name,
            rater_kind="llm",
            score=score,
            timestamp=time.time(),
        )
    log.warning("judge %s returned no parseable score for %s/%s", judge.name, pair.pair_id, metric.id)
    return None


@dataclass
class JudgeRunSummary:
    completed: int = 0
    skipped_existing: int = 0
    failed: list[tuple[str, str, str, str]] = None  # (pair, metric, judge, reason)

    def __post_init__(self):
        if self.failed is None:
            self.failed = []


def judge_dataset(
    pairs: Iterable[QAPair],
    metrics: Iterable[Metric],
    registry: JudgeRegistry,
    gw: Gateway,
    store_path: str | Path,
) -> tuple[list[ScoreRecord], JudgeRunSummary]:
    """Judge the full pairs x metrics x judges cross product.

    Records are appended to the JSON Lines store as they arrive; rerunning
    skips every cell already persisted, so an interrupted run resumes where
    it stopped.
    """
    store_path = Path(store_path)
    existing: set[tuple[str, str, str]] = set()
    records: list[ScoreRecord] = []
    if store_path.exists():
        for line in store_path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = ScoreRecord.from_json(line)
            records.append(record)
            existing.add((record.pair_id, record.metric, record.rater_id))

    summary = JudgeRunSummary(skipped_existing=len(existing))
    store_path.parent.mkdir(parents=True, exist_ok=True)
    with open(store_path, "a", encoding="utf-8") as fh:
        for pair in pairs:
            for metric in metrics:
                for judge in registry.judges:
                    key = (pair.pair_id, metric.id, judge.name)
                    if key in existing:
                        continue
                    try:
                        record = judge_pair(pair, metric, judge, gw)
                    except GatewayError as exc:
                        summary.failed.append((pair.pair_id, metric.id, judge.name, str(exc)))
                        continue
                    if record is None:
                        summary.failed.append(
                            (pair.pair_id, metric.id, judge.name, "no parseable score")
                        )
                        continue
                    fh.write(record.to_json() + "\n")
                    fh.flush()
                    records.append(record)
                    existing.add(key)
                    summary.completed += 1
    return records, summary


def load_records(path: str | Path) -> list[ScoreRecord]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(ScoreRecord.from_json(line))
    return out


def aggregate(
    records: list[ScoreRecord],
    group_by: list[str],
    pairs: Optional[dict[str, QAPair]] = None,
) -> dict[tuple, float]:
    """Mean score per facet cell, carried at full precision.

    group_by names may be: metric, rater, rater_kind, pipeline, language,
    topic, video (the latter four require the pairs mapping). Cells with no
    records simply do not appear.
    """
    pairs = pairs or {}
    sums: dict[tuple, float] = {}
    counts: dict[tuple, int] = {}
    for record in records:
        key = []
        missing = False
        for name in group_by:
            if name == "metric":
                key.append(record.metric)
            elif name == "rater":
                key.append(record.rater_id)
            elif name == "rater_kind":
                key.append(record.rater_kind)
            else:
                pair = pairs.get(record.pair_id)
                if pair is None:
                    missing = True
                    break
                if name == "pipeline":
                    key.append(pair.pipeline)
                elif name == "language":
                    key.append(pair.language)
                elif name == "topic":
                    key.append(pair.topic_label or "unlabeled")
                elif name == "video":
                    key.append(pair.video_id)
                else:
                    raise ValueError(f"unknown facet {name!r}")
        if missing:
            continue
        key = tuple(key)
        sums[key] = sums.get(key, 0.0) + record.score
        counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}
