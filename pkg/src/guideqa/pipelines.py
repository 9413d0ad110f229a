"""The four QA-generation architectures.

single: one long-context call over the whole transcript.
dual:   topic segmentation first, then per-segment generation with an even
        split of the question budget.
rag:    global question generation, then per-question retrieval-grounded
        answering.
multi:  segmentation, per-segment question brainstorming, 1-10 scoring,
        strength-based quota allocation, justification, and grounded
        answering.

A segment's strength is its candidates' mean score minus their population
standard deviation, so consistently strong segments beat noisy ones. Quotas
distribute the per-video budget T proportionally to strength with a floor of
one question per non-empty segment.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from .corpus import QAPair, SegmentRef, Transcript, number_lines
from .gateway import ChatRequest, EndpointConfig, Gateway
from .prompts import PromptLibrary
from . import structparse
from .retrieval import VectorIndex, search

log = logging.getLogger(__name__)

SCORER_TEMPERATURE = 0.0
GENERATION_TEMPERATURE = 0.7
FALLBACK_SCORE = 5
FALLBACK_SEGMENT_COUNT = 6


class PipelineError(Exception):
    pass


class ContextOverflow(PipelineError):
    pass


class EmptyGeneration(PipelineError):
    pass


class InvalidTarget(PipelineError):
    pass


class EmptyScores(PipelineError):
    pass


@dataclass
class Segment:
    topic: str
    start_line: int
    end_line: int
    text: str

    def ref(self) -> SegmentRef:
        return SegmentRef(self.topic, self.start_line, self.end_line)


@dataclass
class CandidateQuestion:
    question: str
    segment_index: int
    score: int = FALLBACK_SCORE
    score_defaulted: bool = False
    selected: bool = False
    justification: Optional[str] = None

    def __post_init__(self):
        if not 1 <= self.score <= 10:
            raise ValueError("score must be in 1..10")


@dataclass
class SegmentStrengths:
    mean: float
    std: float
    strength: float


@dataclass
class AllocationPlan:
    target_total: int
    quotas: list[int]


@dataclass
class PipelineConfig:
    pipeline: str = "single"
    target_questions: int = 20
    brainstorm_per_segment: int = 8
    rag_top_k: int = 5
    prompt_templates: Optional[PromptLibrary] = None
    max_context_chars: int = 4_000_000

    def __post_init__(self):
        if self.target_questions < 1:
            raise ValueError("target_questions must be >= 1")
        if self.brainstorm_per_segment < 1:
            raise ValueError("brainstorm_per_segment must be >= 1")
        if self.rag_top_k < 1:
            raise ValueError("rag_top_k must be >= 1")

    @property
    def templates(self) -> PromptLibrary:
        if self.prompt_templates is None:
            self.prompt_templates = PromptLibrary.load()
        return self.prompt_templates


@dataclass
class MultiAgentTrace:
    """Audit record of one multi-agent run: what was segmented, brainstormed,
    scored, and how the budget was allocated."""

    segments: list[Segment] = field(default_factory=list)
    candidates: list[CandidateQuestion] = field(default_factory=list)
    strengths: list[SegmentStrengths] = field(default_factory=list)
    plan: Optional[AllocationPlan] = None


# --------------------------------------------------------------------------
# Allocation math


def segment_strength(scores: list[int]) -> SegmentStrengths:
    """Mean minus population standard deviation of the candidate scores."""
    if not scores:
        raise EmptyScores("a segment needs at least one scored candidate")
    if any(not 1 <= s <= 10 for s in scores):
        raise ValueError("scores must be integers in 1..10")
    mean = sum(scores) / len(scores)
    variance = sum((s - mean) ** 2 for s in scores) / len(scores)
    std = math.sqrt(variance)
    return SegmentStrengths(mean=mean, std=std, strength=mean - std)


def allocate_quotas(strengths: list[float], target_total: int) -> AllocationPlan:
    """Distribute the question budget proportionally to segment strength.

    Negative strengths are clamped to zero before normalizing; integerization
    is largest-remainder so the quotas sum to the target exactly; every
    segment keeps at least one question whenever the segment count allows it.
    """
    if target_total < 1:
        raise InvalidTarget(f"target must be >= 1, got {target_total}")
    if not strengths:
        raise ValueError("at least one segment is required")
    n = len(strengths)

    if n > target_total:
        # Only the strongest segments can receive their one-question floor.
        ranked = sorted(range(n), key=lambda i: (-strengths[i], i))
        quotas = [0] * n
        for i in ranked[:target_total]:
            quotas[i] = 1
        return AllocationPlan(target_total=target_total, quotas=quotas)

    clamped = [max(0.0, s) for s in strengths]
    total = sum(clamped)
    if total == 0:
        shares = [target_total / n] * n
    else:
        shares = [s / total * target_total for s in clamped]

    quotas = [int(math.floor(share)) for share in shares]
    remainders = [share - q for share, q in zip(shares, quotas)]
    leftover = target_total - sum(quotas)
    for i in sorted(range(n), key=lambda i: (-remainders[i], i))[:leftover]:
        quotas[i] += 1

    # One-question floor, funded by the largest quotas (ties: lower index).
    for i in range(n):
        while quotas[i] == 0:
            donor = max(range(n), key=lambda j: (quotas[j], -j))
            quotas[donor] -= 1
            quotas[i] += 1
    return AllocationPlan(target_total=target_total, quotas=quotas)


def even_split(total: int, parts: int) -> list[int]:
    """Split a total into near-equal integers, remainder to the earliest."""
    base, extra = divmod(total, parts)
    return [base + 1 if i < extra else base for i in range(parts)]


# --------------------------------------------------------------------------
# Shared plumbing


def _check_context(cfg: PipelineConfig, system: str, user: str) -> None:
    if len(system) + len(user) > cfg.max_context_chars:
        raise ContextOverflow(
            f"prompt of {len(system) + len(user)} chars exceeds the "
            f"{cfg.max_context_chars}-char context budget"
        )


def _chat(
    gw: Gateway,
    endpoint: EndpointConfig,
    cfg: PipelineConfig,
    system: str,
    user: str,
    temperature: float = GENERATION_TEMPERATURE,
) -> str:
    _check_context(cfg, system, user)
    return gw.chat(endpoint, ChatRequest(system=system, user=user, temperature=temperature))


def _pair_id(video_id: str, pipeline: str, n: int) -> str:
    return f"{video_id}-{pipeline}-q{n:04d}"


# --------------------------------------------------------------------------
# Segmentation (shared by dual and multi)


def uniform_segments(t: Transcript, parts: int = FALLBACK_SEGMENT_COUNT) -> list[Segment]:
    n = len(t.lines)
    per = math.ceil(n / parts)
    segments = []
    start = 1
    while start <= n:
        end = min(start + per - 1, n)
        segments.append(
            Segment(
                topic=f"Part {len(segments) + 1}",
                start_line=start,
                end_line=end,
                text=t.text(start, end),
            )
        )
        start = end + 1
    return segments


def segment_transcript(
    t: Transcript, cfg: PipelineConfig, gw: Gateway, endpoint: EndpointConfig
) -> list[Segment]:
    """Ask the segmentation agent for a topic tiling; fall back to uniform
    slices after two unparseable replies."""
    template = cfg.templates.get("chunking")
    system, user = template.fill(
        total_lines=len(t.lines), numbered_transcript=number_lines(t)
    )
    for attempt in range(2):
        text = _chat(gw, endpoint, cfg, system, user)
        try:
            outcome = structparse.parse_segmentation(text, total_lines=len(t.lines))
        except structparse.Unparseable:
            log.warning(
                "segmentation reply unparseable for %s (attempt %d)",
                t.meta.video_id,
                attempt + 1,
            )
            continue
        for repair in outcome.repairs:
            log.info("segmentation repair for %s: %s", t.meta.video_id, repair)
        return [
            Segment(
                topic=e.topic,
                start_line=e.start_line,
                end_line=e.end_line,
                text=t.text(e.start_line, e.end_line),
            )
            for e in outcome.value.entries
        ]
    log.warning("falling back to uniform segmentation for %s", t.meta.video_id)
    return uniform_segments(t)


# --------------------------------------------------------------------------
# Single-agent


def run_single_agent(
    t: Transcript, cfg: PipelineConfig, gw: Gateway, endpoint: EndpointConfig
) -> list[QAPair]:
    template = cfg.templates.get("single_agent")
    system, user = template.fill(
        num_questions=cfg.target_questions, transcript=t.text()
    )
    reply = _chat(gw, endpoint, cfg, system, user)
    try:
        outcome = structparse.parse_qa_list(reply, expected_n=cfg.target_questions)
    except structparse.NoPairsFound as exc:
        raise EmptyGeneration(f"no pairs for {t.meta.video_id}") from exc
    for repair in outcome.repairs:
        log.info("single-agent repair for %s: %s", t.meta.video_id, repair)
    pairs = outcome.value[: cfg.target_questions]
    return [
        QAPair(
            pair_id=_pair_id(t.meta.video_id, "single", i + 1),
            video_id=t.meta.video_id,
            language=t.meta.language,
            pipeline="single",
            question=q,
            answer=a,
        )
        for i, (q, a) in enumerate(pairs)
    ]


# --------------------------------------------------------------------------
# Dual-agent


def run_dual_agent(
    t: Transcript, cfg: PipelineConfig, gw: Gateway, endpoint: EndpointConfig
) -> list[QAPair]:
    segments = segment_transcript(t, cfg, gw, endpoint)
    targets = even_split(cfg.target_questions, len(segments))
    template = cfg.templates.get("segment_qa")

    per_segment: list[list[tuple[str, str]]] = []
    for segment, target in zip(segments, targets):
        if target == 0:
            per_segment.append([])
            continue
        system, user = template.fill(num_questions=target, transcript=segment.text)
        reply = _chat(gw, endpoint, cfg, system, user)
        try:
            outcome = structparse.parse_qa_list(reply, expected_n=target)
        except structparse.NoPairsFound:
            log.warning("no pairs for segment %r of %s", segment.topic, t.meta.video_id)
            per_segment.append([])
            continue
        for repair in outcome.repairs:
            log.info("dual-agent repair for %s: %s", t.meta.video_id, repair)
        per_segment.append(outcome.value)

    # Trim overshoot back to T, taking the last pair from whichever segment
    # currently holds the most (ties: the later segment loses first).
    total = sum(len(pairs) for pairs in per_segment)
    while total > cfg.target_questions:
        donor = max(range(len(per_segment)), key=lambda i: (len(per_segment[i]), i))
        per_segment[donor].pop()
        total -= 1

    result = []
    counter = 0
    for segment, pairs in zip(segments, per_segment):
        for q, a in pairs:
            counter += 1
            result.append(
                QAPair(
                    pair_id=_pair_id(t.meta.video_id, "dual", counter),
                    video_id=t.meta.video_id,
                    language=t.meta.language,
                    pipeline="dual",
                    question=q,
                    answer=a,
                    segment_ref=segment.ref(),
                )
            )
    if not result:
        raise EmptyGeneration(f"no pairs for {t.meta.video_id}")
    return result


# --------------------------------------------------------------------------
# RAG


def run_rag(
    t: Transcript,
    cfg: PipelineConfig,
    gw: Gateway,
    endpoint: EndpointConfig,
    idx: VectorIndex,
) -> list[QAPair]:
    templates = cfg.templates
    system, user = templates.get("rag_questions").fill(
        num_questions=cfg.target_questions, transcript=t.text()
    )
    reply = _chat(gw, endpoint, cfg, system, user)
    try:
        outcome = structparse.parse_numbered_list(reply)
    except structparse.NoItemsFound as exc:
        raise EmptyGeneration(f"no questions for {t.meta.video_id}") from exc
    for repair in outcome.repairs:
        log.info("rag repair for %s: %s", t.meta.video_id, repair)

    seen = set()
    questions = []
    for q in outcome.value:
        if q in seen:
            log.info("dropping exact duplicate question for %s: %r", t.meta.video_id, q)
            continue
        seen.add(q)
        questions.append(q)
    questions = questions[: cfg.target_questions]

    answer_template = templates.get("rag_answer")
    result = []
    for i, question in enumerate(questions, start=1):
        hits = search(idx, question, cfg.rag_top_k, gw)
        chunks = [chunk for chunk, _ in hits]
        context = "\n\n".join(chunk.text for chunk in chunks)
        system, user = answer_template.fill(question=question, context=context)
        answer = _chat(gw, endpoint, cfg, system, user)
        chunk_ids = ",".join(str(c.chunk_id) for c in chunks)
        result.append(
            QAPair(
                pair_id=_pair_id(t.meta.video_id, "rag", i),
                video_id=t.meta.video_id,
                language=t.meta.language,
                pipeline="rag",
                question=question,
                answer=answer.strip(),
                segment_ref=SegmentRef(
                    topic=f"chunks {chunk_ids}",
                    start_line=min(c.start_line for c in chunks),
                    end_line=max(c.end_line for c in chunks),
                ),
            )
        )
    if not result:
        raise EmptyGeneration(f"no pairs for {t.meta.video_id}")
    return result


# --------------------------------------------------------------------------
# Multi-agent


def _score_candidate(
    gw: Gateway,
    endpoint: EndpointConfig,
    cfg: PipelineConfig,
    question: str,
    context_hint: str,
) -> tuple[int, bool]:
    """One scorer call with a single retry; unparseable replies fall back to
    the scale midpoint and are flagged."""
    system, user = cfg.templates.get("scorer").fill(
        question=question, context_hint=context_hint
    )
    for _ in range(2):
        reply = _chat(gw, endpoint, cfg, system, user, temperature=SCORER_TEMPERATURE)
        try:
            return structparse.parse_int_score(reply, 1, 10), False
        except structparse.NoNumberFound:
            continue
    log.warning("scorer returned no number twice; defaulting to %d", FALLBACK_SCORE)
    return FALLBACK_SCORE, True


def run_multi_agent(
    t: Transcript,
    cfg: PipelineConfig,
    gw: Gateway,
    endpoint: EndpointConfig,
    trace: Optional[MultiAgentTrace] = None,
) -> list[QAPair]:
    trace = trace if trace is not None else MultiAgentTrace()
    templates = cfg.templates
    target = cfg.target_questions

    # Stage 1: topic segmentation.
    segments = segment_transcript(t, cfg, gw, endpoint)
    trace.segments = segments

    # Stage 2: per-segment question brainstorming (deliberate over-generation).
    candidates: list[CandidateQuestion] = []
    for si, segment in enumerate(segments):
        system, user = templates.get("brainstorm").fill(segment_content=segment.text)
        reply = _chat(gw, endpoint, cfg, system, user)
        try:
            outcome = structparse.parse_numbered_list(reply)
        except structparse.NoItemsFound:
            log.warning("no candidates for segment %r of %s", segment.topic, t.meta.video_id)
            continue
        for question in outcome.value[: cfg.brainstorm_per_segment]:
            candidates.append(CandidateQuestion(question=question, segment_index=si))
    if not candidates:
        raise EmptyGeneration(f"no candidate questions for {t.meta.video_id}")
    trace.candidates = candidates

    # Stage 3: scoring.
    for cand in candidates:
        hint = segments[cand.segment_index].topic
        cand.score, cand.score_defaulted = _score_candidate(
            gw, endpoint, cfg, cand.question, hint
        )

    # Stage 4: strength and quota allocation over non-empty segments.
    occupied = sorted({c.segment_index for c in candidates})
    strengths = []
    for si in occupied:
        scores = [c.score for c in candidates if c.segment_index == si]
        strengths.append(segment_strength(scores))
    trace.strengths = strengths
    plan = allocate_quotas([s.strength for s in strengths], target)
    trace.plan = plan

    # Stage 5: keep the top-quota questions per segment (ties: first come).
    for si, quota in zip(occupied, plan.quotas):
        members = [c for c in candidates if c.segment_index == si]
        ranked = sorted(range(len(members)), key=lambda i: (-members[i].score, i))
        for rank in ranked[:quota]:
            members[rank].selected = True
    # If some segments had fewer candidates than their quota, promote the
    # best remaining candidates anywhere so the budget is still met.
    selected_count = sum(c.selected for c in candidates)
    if selected_count < target:
        pool = [(ci, c) for ci, c in enumerate(candidates) if not c.selected]
        pool.sort(key=lambda item: (-item[1].score, item[0]))
        for _, cand in pool[: target - selected_count]:
            cand.selected = True

    # Stage 6: justification for every candidate, selected or not.
    justifier = templates.get("justifier")
    for cand in candidates:
        system, user = justifier.fill(
            question=cand.question,
            topic=segments[cand.segment_index].topic,
            status="Selected" if cand.selected else "Rejected",
        )
        cand.justification = _chat(gw, endpoint, cfg, system, user).strip()

    # Stage 7: grounded answers for the selected questions only.
    answering = templates.get("answering")
    answers: dict[int, str] = {}
    for ci, cand in enumerate(candidates):
        if not cand.selected:
            continue
        system, user = answering.fill(
            context=segments[cand.segment_index].text, question=cand.question
        )
        answers[ci] = _chat(gw, endpoint, cfg, system, user).strip()

    result = []
    for ci, cand in enumerate(candidates):
        segment = segments[cand.segment_index]
        result.append(
            QAPair(
                pair_id=_pair_id(t.meta.video_id, "multi", ci + 1),
                video_id=t.meta.video_id,
                language=t.meta.language,
                pipeline="multi",
                question=cand.question,
                answer=answers.get(ci, ""),
                segment_ref=segment.ref(),
                candidate_score=cand.score,
                status="selected" if cand.selected else "rejected",
                justification=cand.justification,
            )
        )
    return result
