"""Dataset-construction support: layered PII anonymization, closed-set topic
labeling with a human-review queue, and the balanced human-evaluation
sampler.

Anonymization always runs the pattern layer; the external NER and flagger
layers are optional and degrade gracefully when their endpoints fail, so a
broken service can never cause PII to slip through silently un-redacted.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .corpus import PIPELINES, TOPIC_LABELS, QAPair
from .gateway import ChatRequest, EndpointConfig, Gateway, GatewayError

log = logging.getLogger(__name__)


class CurationError(Exception):
    pass


class InsufficientPairs(CurationError):
    pass


# --------------------------------------------------------------------------
# PII anonymization

PII_CATEGORIES = ("person", "org", "location", "email", "phone", "url", "handle", "id_number")

# Order matters: earlier detectors win overlaps within the pattern layer.
_PATTERNS = (
    ("email", re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")),
    ("url", re.compile(r"(?:https?://|www\.)[^\s<>\"')\]]+")),
    ("phone", re.compile(r"(?<![\w.+-])\+?\d(?:[\s().-]{0,2}\d){6,14}(?![\w-])")),
    ("handle", re.compile(r"(?<![\w.])@[A-Za-z0-9_]{2,}")),
    ("id_number", re.compile(r"(?<!\d)\d{9,}(?!\d)")),
)


def _plausible_phone(s: str) -> bool:
    """Bare long digit runs are treated as identifiers, not phone numbers."""
    digits = sum(c.isdigit() for c in s)
    if not 7 <= digits <= 15:
        return False
    return s.startswith("+") or any(not c.isdigit() for c in s) or digits <= 8

_LAYERS = ("pattern", "ner_service", "llm_flag")
_TOKEN = re.compile(r"\[[A-Z_]+_\d+\]")

NER_SYSTEM = "You extract named entities from text."
NER_USER = (
    "List every person, organization, and location name in the text below as a "
    'JSON array of objects with keys "text" and "category" (person, org, or '
    "location). Output ONLY the JSON.\n\nText: {text}"
)
FLAG_SYSTEM = "You review text for implicit personal identifiers."
FLAG_USER = (
    "List any phrase in the text below that could identify a specific person "
    "indirectly (roles, titles, unique circumstances) as a JSON array of objects "
    'with keys "text" and "category". Output ONLY the JSON.\n\nText: {text}'
)


@dataclass
class PiiSpan:
    start: int
    end: int
    category: str
    source: str
    replacement: str
    surface: str = ""

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError("span offsets must satisfy 0 <= start < end")
        if self.category not in PII_CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.source not in _LAYERS:
            raise ValueError(f"unknown source {self.source!r}")


def _pattern_spans(text: str) -> list[tuple[int, int, int, int, str]]:
    """(layer_rank, detector_rank, start, end, category) candidates."""
    out = []
    for rank, (category, pattern) in enumerate(_PATTERNS):
        for m in pattern.finditer(text):
            if category == "phone" and not _plausible_phone(m.group()):
                continue
            out.append((0, rank, m.start(), m.end(), category))
    return out


def _service_spans(
    text: str,
    gw: Gateway,
    endpoint: EndpointConfig,
    system: str,
    user_template: str,
    layer_rank: int,
    allowed: tuple[str, ...],
) -> list[tuple[int, int, int, int, str]]:
    reply = gw.chat(
        endpoint,
        ChatRequest(system=system, user=user_template.replace("{text}", text), temperature=0.0),
    )
    try:
        entries = json.loads(reply)
    except json.JSONDecodeError:
        m = re.search(r"\[.*\]", reply, re.DOTALL)
        if not m:
            return []
        try:
            entries = json.loads(m.group())
        except json.JSONDecodeError:
            return []
    out = []
    for rank, entry in enumerate(entries):
        if not isinstance(entry, dict):
            continue
        surface = str(entry.get("text") or "")
        category = str(entry.get("category") or "person").lower()
        if category not in allowed or not surface.strip():
            continue
        if _TOKEN.fullmatch(surface.strip()):
            continue  # never re-flag a replacement token
        for m in re.finditer(re.escape(surface), text):
            out.append((layer_rank, rank, m.start(), m.end(), category))
    return out


def anonymize(
    text: str,
    gw: Optional[Gateway] = None,
    ner_endpoint: Optional[EndpointConfig] = None,
    flagger_endpoint: Optional[EndpointConfig] = None,
) -> tuple[str, list[PiiSpan]]:
    """Redact PII with per-document stable [CATEGORY_n] pseudonyms.

    Layers run in order (patterns, NER service, LLM flagger); overlapping
    detections are resolved in favor of the earliest layer, then the earliest
    detector. Equal surface forms share a token, so coreference survives.
    """
    candidates = _pattern_spans(text)
    if gw is not None and ner_endpoint is not None:
        try:
            candidates += _service_spans(
                text, gw, ner_endpoint, NER_SYSTEM, NER_USER, 1, ("person", "org", "location")
            )
        except GatewayError as exc:
            log.warning("NER layer unavailable, continuing pattern-only: %s", exc)
    if gw is not None and flagger_endpoint is not None:
        try:
            candidates += _service_spans(
                text, gw, flagger_endpoint, FLAG_SYSTEM, FLAG_USER, 2, PII_CATEGORIES
            )
        except GatewayError as exc:
            log.warning("LLM flag layer unavailable, continuing without it: %s", exc)

    accepted: list[tuple[int, int, int, int, str]] = []
    for span in sorted(candidates):
        layer, rank, start, end, category = span
        if any(start < e and s < end for _, _, s, e, _ in accepted):
            continue
        accepted.append(span)
    accepted.sort(key=lambda s: s[2])

    source_by_layer = dict(enumerate(_LAYERS))
    tokens: dict[tuple[str, str], str] = {}
    counters: dict[str, int] = {}
    spans: list[PiiSpan] = []
    redacted: list[str] = []
    cursor = 0
    for layer, _, start, end, category in accepted:
        surface = text[start:end]
        key = (category, surface)
        if key not in tokens:
            counters[category] = counters.get(category, 0) + 1
            tokens[key] = f"[{category.upper()}_{counters[category]}]"
        replacement = tokens[key]
        spans.append(
            PiiSpan(
                start=start,
                end=end,
                category=category,
                source=source_by_layer[layer],
                replacement=replacement,
                surface=surface,
            )
        )
        redacted.append(text[cursor:start])
        redacted.append(replacement)
        cursor = end
    redacted.append(text[cursor:])
    return "".join(redacted), spans


def write_audit_log(spans_by_doc: dict[str, list[PiiSpan]], path: str | Path) -> None:
    """One JSON line per document; kept separate from the redacted dataset."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(spans_by_doc):
            record = {
                "doc_id": doc_id,
                "spans": [
                    {
                        "start": s.start,
                        "end": s.end,
                        "category": s.category,
                        "source": s.source,
                        "replacement": s.replacement,
                        "surface": s.surface,
                    }
                    for s in spans_by_doc[doc_id]
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# --------------------------------------------------------------------------
# Topic labeling

TOPIC_SYSTEM = "You classify question-answer pairs into mentorship topics."
TOPIC_USER = (
    "Classify the following question-answer pair into exactly one of these "
    "topics:\n{topics}\n\nQuestion: {question}\nAnswer: {answer}\n\n"
    "Respond with the topic name only."
)


def label_topic(
    pair: QAPair, gw: Gateway, endpoint: EndpointConfig
) -> Optional[str]:
    """Forced-choice labeling; the first exact topic name in the reply wins.
    Two non-answers leave the pair unlabeled (queued for human review)."""
    user = (
        TOPIC_USER.replace("{topics}", "\n".join(f"- {t}" for t in TOPIC_LABELS))
        .replace("{question}", pair.question)
        .replace("{answer}", pair.answer)
    )
    request = ChatRequest(system=TOPIC_SYSTEM, user=user, temperature=0.0)
    for _ in range(2):
        reply = gw.chat(endpoint, request)
        lowered = reply.lower()
        hits = [
            (lowered.find(t.lower()), t)
            for t in TOPIC_LABELS
            if lowered.find(t.lower()) != -1
        ]
        if hits:
            return min(hits)[1]
    return None


def label_topics(
    pairs: list[QAPair],
    gw: Gateway,
    endpoint: EndpointConfig,
    review_path: str | Path,
) -> tuple[list[QAPair], list[QAPair]]:
    """Label every pair; export the unlabelable ones for verification."""
    labeled, queued = [], []
    for pair in pairs:
        topic = label_topic(pair, gw, endpoint)
        if topic is None:
            queued.append(pair)
        else:
            pair.topic_label = topic
            labeled.append(pair)
    with open(review_path, "w", encoding="utf-8") as fh:
        for pair in queued:
            fh.write(json.dumps(pair.to_record(), ensure_ascii=False) + "\n")
    return labeled, queued


# --------------------------------------------------------------------------
# Human-evaluation sampling


@dataclass
class SamplingPlan:
    languages: list[str]
    annotators: dict[str, list[str]]
    videos_per_language: int = 5
    pipelines: tuple[str, ...] = PIPELINES
    pairs_per_cell: int = 3
    raters_per_pair: int = 3
    seed: int = 0

    def __post_init__(self):
        for lang in self.languages:
            pool = self.annotators.get(lang, [])
            if len(pool) < self.raters_per_pair:
                raise ValueError(
                    f"language {lang!r} needs at least {self.raters_per_pair} annotators"
                )

    @property
    def total_pairs(self) -> int:
        return (
            len(self.languages)
            * self.videos_per_language
            * len(self.pipelines)
            * self.pairs_per_cell
        )


@dataclass
class SampledPair:
    pair_id: str
    language: str
    video_id: str
    pipeline: str
    raters: list[str] = field(default_factory=list)


def sample_for_human_eval(pairs: list[QAPair], plan: SamplingPlan) -> list[SampledPair]:
    """Balanced deterministic sample: per language pick videos, then
    pairs_per_cell pairs per (video, pipeline) cell, then assign
    raters_per_pair annotators round-robin from the language pool."""
    rng = random.Random(plan.seed)
    by_cell: dict[tuple[str, str, str], list[QAPair]] = {}
    videos_by_language: dict[str, set[str]] = {}
    for pair in pairs:
        by_cell.setdefault((pair.language, pair.video_id, pair.pipeline), []).append(pair)
        videos_by_language.setdefault(pair.language, set()).add(pair.video_id)

    sampled: list[SampledPair] = []
    for language in plan.languages:
        videos = sorted(videos_by_language.get(language, ()))
        # A usable video has enough selected pairs in every pipeline cell.
        usable = [
            v
            for v in videos
            if all(
                len([p for p in by_cell.get((language, v, pl), []) if p.status == "selected"])
                >= plan.pairs_per_cell
                for pl in plan.pipelines
            )
        ]
        if len(usable) < plan.videos_per_language:
            raise InsufficientPairs(
                f"language {language!r}: only {len(usable)} videos have "
                f">={plan.pairs_per_cell} selected pairs per pipeline, "
                f"need {plan.videos_per_language}"
            )
        chosen = sorted(rng.sample(usable, plan.videos_per_language))

        language_sampled: list[SampledPair] = []
        for video in chosen:
            for pipeline in plan.pipelines:
                cell = sorted(
                    (p for p in by_cell[(language, video, pipeline)] if p.status == "selected"),
                    key=lambda p: p.pair_id,
                )
                picked = sorted(rng.sample(cell, plan.pairs_per_cell), key=lambda p: p.pair_id)
                for pair in picked:
                    language_sampled.append(
                        SampledPair(
                            pair_id=pair.pair_id,
                            language=language,
                            video_id=video,
                            pipeline=pipeline,
                        )
                    )

        pool = plan.annotators[language]
        for j, item in enumerate(language_sampled):
            item.raters = [pool[(j + m) % len(pool)] for m in range(plan.raters_per_pair)]
        sampled.extend(language_sampled)
    return sampled


def write_sample(sampled: list[SampledPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in sampled:
            fh.write(
                json.dumps(
                    {
                        "pair_id": item.pair_id,
                        "language": item.language,
                        "video_id": item.video_id,
                        "pipeline": item.pipeline,
                        "raters": item.raters,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_sample(path: str | Path) -> list[SampledPair]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(SampledPair(**json.loads(line)))
    return out
