"""Canonical data model for transcripts and QA datasets.

Transcripts arrive as plain UTF-8 text, one utterance per line, with a JSON
sidecar (`<basename>.meta.json`) carrying the video metadata. Generated QA
pairs are exported as JSON Lines with a stable record and field order so that
repeated runs diff cleanly.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Optional

PIPELINES = ("single", "dual", "rag", "multi")

TOPIC_LABELS = (
    "Entrepreneurship",
    "Education",
    "Finance",
    "Mental Health",
    "Personal Growth",
    "Physical Health",
)

UNLABELED = "unlabeled"


class CorpusError(Exception):
    """Base class for corpus-level failures."""


class FileUnreadable(CorpusError):
    pass


class EmptyTranscript(CorpusError):
    pass


class WriteFailure(CorpusError):
    pass


@dataclass
class VideoMeta:
    video_id: str
    language: str
    source_url: Optional[str] = None
    duration_seconds: Optional[float] = None
    channel: Optional[str] = None

    def __post_init__(self):
        if not self.video_id:
            raise ValueError("video_id must be non-empty")
        if self.duration_seconds is not None and self.duration_seconds < 0:
            raise ValueError("duration_seconds must be non-negative")


@dataclass
class Transcript:
    meta: VideoMeta
    lines: list[str]

    def __post_init__(self):
        if not self.lines:
            raise EmptyTranscript(f"transcript {self.meta.video_id} has no lines")
        for i, line in enumerate(self.lines, start=1):
            if not line.strip():
                raise ValueError(f"line {i} is blank after trimming")

    def __len__(self) -> int:
        return len(self.lines)

    def line(self, index: int) -> str:
        """Return the 1-indexed utterance."""
        return self.lines[index - 1]

    def text(self, start_line: int = 1, end_line: Optional[int] = None) -> str:
        """Concatenated utterances for an inclusive 1-indexed line range."""
        end_line = len(self.lines) if end_line is None else end_line
        if not (1 <= start_line <= end_line <= len(self.lines)):
            raise ValueError(f"invalid line range {start_line}..{end_line}")
        return "\n".join(self.lines[start_line - 1 : end_line])


# Field order is the export order; keep it stable.
QA_FIELDS = (
    "pair_id",
    "video_id",
    "language",
    "pipeline",
    "question",
    "answer",
    "topic_label",
    "segment_ref",
    "candidate_score",
    "status",
    "justification",
)


@dataclass
class SegmentRef:
    topic: str
    start_line: int
    end_line: int

    def as_list(self) -> list:
        return [self.topic, self.start_line, self.end_line]


@dataclass
class QAPair:
    pair_id: str
    video_id: str
    language: str
    pipeline: str
    question: str
    answer: str
    topic_label: Optional[str] = None
    segment_ref: Optional[SegmentRef] = None
    candidate_score: Optional[int] = None
    status: str = "selected"
    justification: Optional[str] = None

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}")
        if self.status not in ("selected", "rejected"):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "selected" and (not self.question or not self.answer):
            raise ValueError("selected pairs must carry a non-empty question and answer")
        if self.candidate_score is not None and not 1 <= self.candidate_score <= 10:
            raise ValueError("candidate_score must be in 1..10")
        if self.topic_label is not None and self.topic_label not in TOPIC_LABELS:
            raise ValueError(f"unknown topic label {self.topic_label!r}")

    def to_record(self) -> dict:
        rec = {}
        for name in QA_FIELDS:
            value = getattr(self, name)
            if isinstance(value, SegmentRef):
                value = value.as_list()
            rec[name] = value
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "QAPair":
        kwargs = dict(rec)
        ref = kwargs.get("segment_ref")
        if ref is not None:
            kwargs["segment_ref"] = SegmentRef(ref[0], int(ref[1]), int(ref[2]))
        return cls(**kwargs)


@dataclass
class DatasetStats:
    total_pairs: int = 0
    total_videos: int = 0
    by_language: dict = field(default_factory=dict)
    by_pipeline: dict = field(default_factory=dict)
    by_topic: dict = field(default_factory=dict)

    @classmethod
    def of(cls, pairs: Iterable[QAPair]) -> "DatasetStats":
        pairs = list(pairs)
        by_language = Counter(p.language for p in pairs)
        by_pipeline = Counter(p.pipeline for p in pairs)
        by_topic = Counter(p.topic_label if p.topic_label else UNLABELED for p in pairs)
        return cls(
            total_pairs=len(pairs),
            total_videos=len({p.video_id for p in pairs}),
            by_language=dict(sorted(by_language.items())),
            by_pipeline=dict(sorted(by_pipeline.items())),
            by_topic=dict(sorted(by_topic.items())),
        )

    def as_dict(self) -> dict:
        return asdict(self)


def ingest_transcript(path: str | Path, meta: VideoMeta) -> Transcript:
    """Read a one-utterance-per-line file, dropping blanks and renumbering 1..N."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    lines = [line.strip() for line in raw.splitlines()]
    lines = [line for line in lines if line]
    if not lines:
        raise EmptyTranscript(f"{path} contains no non-blank lines")
    return Transcript(meta=meta, lines=lines)


def read_sidecar(transcript_path: str | Path) -> VideoMeta:
    """Load the `<basename>.meta.json` sidecar next to a transcript file."""
    transcript_path = Path(transcript_path)
    sidecar = transcript_path.with_suffix(".meta.json")
    if not sidecar.exists():
        raise FileUnreadable(f"missing sidecar {sidecar}")
    try:
        data = json.loads(sidecar.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FileUnreadable(f"cannot read sidecar {sidecar}: {exc}") from exc
    return VideoMeta(
        video_id=data["video_id"],
        language=data["language"],
        source_url=data.get("source_url"),
        duration_seconds=data.get("duration_seconds"),
        channel=data.get("channel"),
    )


def number_lines(t: Transcript) -> str:
    """Render a transcript as '<index>. <text>' lines, 1-indexed."""
    return "\n".join(f"{i}. {line}" for i, line in enumerate(t.lines, start=1))


def export_dataset(pairs: list[QAPair], path: str | Path) -> DatasetStats:
    """Write pairs as JSON Lines in (video_id, pipeline, pair_id) order."""
    ordered = sorted(pairs, key=lambda p: (p.video_id, p.pipeline, p.pair_id))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for pair in ordered:
                fh.write(json.dumps(pair.to_record(), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise WriteFailure(f"cannot write {path}: {exc}") from exc
    return DatasetStats.of(ordered)


def load_dataset(path: str | Path) -> list[QAPair]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [QAPair.from_record(json.loads(line)) for line in fh if line.strip()]
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
