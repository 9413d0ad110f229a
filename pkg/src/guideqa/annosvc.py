"""HTTP service backing human annotation.

Serves each annotator their assigned QA pairs one at a time with the seven
rubric statements, collects complete 7-score Likert submissions, and persists
them as ScoreRecords in an append-only JSON Lines store. All progress state
is derived by replaying the store, so a restart loses nothing.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .corpus import QAPair
from .curation import SampledPair
from .judge import METRICS, METRIC_IDS, ScoreRecord

log = logging.getLogger(__name__)

ADVISORY = "Please do not rate neutral (3) unless necessary or required."

LIKERT_LABELS = [
    "1 - Strongly Disagree",
    "2 - Disagree",
    "3 - Neutral",
    "4 - Agree",
    "5 - Strongly Agree",
]


@dataclass
class Assignment:
    annotator_id: str
    language: str
    pair_ids: list[str] = field(default_factory=list)


def build_assignments(sampled: list[SampledPair]) -> dict[str, Assignment]:
    """Fixed per-annotator task lists in sample order."""
    assignments: dict[str, Assignment] = {}
    for item in sampled:
        for rater in item.raters:
            assignment = assignments.setdefault(
                rater, Assignment(annotator_id=rater, language=item.language)
            )
            assignment.pair_ids.append(item.pair_id)
    return assignments


class RecordStore:
    """Append-only JSON Lines store with atomic multi-record submits.

    A submission's records are serialized into one buffer and written with a
    single write followed by fsync, so a crash leaves either the whole batch
    or none of it. Replay skips a torn trailing line.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.records: list[ScoreRecord] = []
        self.submitted: set[tuple[str, str]] = set()  # (rater_id, pair_id)
        if self.path.exists():
            self._replay()

    def _replay(self) -> None:
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                record = ScoreRecord.from_json(line)
            except (json.JSONDecodeError, TypeError, ValueError):
                log.warning("skipping torn or invalid record line in %s", self.path)
                continue
            self.records.append(record)
            self.submitted.add((record.rater_id, record.pair_id))

    def append_batch(self, records: list[ScoreRecord]) -> None:
        blob = "".join(r.to_json() + "\n" for r in records).encode("utf-8")
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "ab") as fh:
                self._write(fh, blob)
                fh.flush()
                os.fsync(fh.fileno())
            self.records.extend(records)
            for record in records:
                self.submitted.add((record.rater_id, record.pair_id))

    def _write(self, fh, blob: bytes) -> None:
        # Split out so tests can inject a crash at the write boundary.
        fh.write(blob)


class RatingSubmission(BaseModel):
    annotator_id: str
    pair_id: str
    scores: dict[str, int]


def build_app(
    assignments: dict[str, Assignment],
    pairs: dict[str, QAPair],
    store: RecordStore,
    ui_dir: Optional[str | Path] = None,
) -> FastAPI:
    app = FastAPI(title="guideqa annotation service")

    def _assignment(annotator_id: str) -> Assignment:
        assignment = assignments.get(annotator_id)
        if assignment is None:
            raise HTTPException(status_code=404, detail=f"unknown annotator {annotator_id!r}")
        return assignment

    @app.get("/api/next")
    def next_task(annotator_id: str):
        assignment = _assignment(annotator_id)
        total = len(assignment.pair_ids)
        for position, pair_id in enumerate(assignment.pair_ids, start=1):
            if (annotator_id, pair_id) in store.submitted:
                continue
            pair = pairs.get(pair_id)
            if pair is None:
                raise HTTPException(status_code=500, detail=f"pair {pair_id!r} missing from dataset")
            return {
                "done": False,
                "annotator_id": annotator_id,
                "pair_id": pair_id,
                "question": pair.question,
                "answer": pair.answer,
                "index": position,
                "total": total,
                "metrics": [
                    {"id": m.id, "statement": m.statement, "target": m.target}
                    for m in METRICS
                ],
                "likert": LIKERT_LABELS,
                "advisory": ADVISORY,
            }
        return {"done": True, "annotator_id": annotator_id, "total": total}

    @app.post("/api/rate")
    def rate(submission: RatingSubmission):
        assignment = _assignment(submission.annotator_id)
        if submission.pair_id not in assignment.pair_ids:
            raise HTTPException(
                status_code=404,
                detail=f"pair {submission.pair_id!r} is not assigned to {submission.annotator_id!r}",
            )
        if (submission.annotator_id, submission.pair_id) in store.submitted:
            raise HTTPException(status_code=409, detail="pair already rated by this annotator")
        missing = set(METRIC_IDS) - submission.scores.keys()
        unknown = submission.scores.keys() - set(METRIC_IDS)
        if missing or unknown:
            raise HTTPException(
                status_code=422,
                detail=f"scores must cover exactly the seven metrics "
                f"(missing {sorted(missing)}, unknown {sorted(unknown)})",
            )
        bad = {m: s for m, s in submission.scores.items() if not 1 <= s <= 5}
        if bad:
            raise HTTPException(status_code=422, detail=f"scores out of 1..5 range: {bad}")

        now = time.time()
        records = [
            ScoreRecord(
                pair_id=submission.pair_id,
                metric=metric_id,
                rater_id=submission.annotator_id,
                rater_kind="human",
                score=submission.scores[metric_id],
                timestamp=now,
            )
            for metric_id in METRIC_IDS
        ]
        store.append_batch(records)
        return {"accepted": True, "records": len(records)}

    @app.get("/api/progress")
    def progress():
        by_annotator: dict[str, int] = {a: 0 for a in assignments}
        for rater_id, _pair_id in store.submitted:
            if rater_id in by_annotator:
                by_annotator[rater_id] += 1
        by_language: dict[str, int] = {}
        for annotator_id, count in by_annotator.items():
            language = assignments[annotator_id].language
            by_language[language] = by_language.get(language, 0) + count
        return {
            "by_annotator": {
                a: {
                    "completed": by_annotator[a],
                    "total": len(assignments[a].pair_ids),
                }
                for a in sorted(assignments)
            },
            "by_language": dict(sorted(by_language.items())),
            "records": len(store.records),
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(app: FastAPI, host: str = "127.0.0.1", port: int = 8080):
    import uvicorn

    uvicorn.run(app, host=host, port=port)
