"""Shared fixtures: a two-video synthetic corpus plus a fully scripted mock
endpoint that drives all four pipelines deterministically.

Every mock rule is stateless (one response, repeated), so repeated runs
against the same server stay byte-identical without resets.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from guideqa.gateway import Gateway, MockLLMServer, MockRule
from guideqa.corpus import Transcript, VideoMeta
from guideqa.structparse import format_qa_list, format_numbered_list

FIXTURE_T = 6
SEGMENT_BOUNDS = [(1, 4), (5, 8), (9, 12)]
SEGMENT_TOPICS = [
    "Choosing a direction early",
    "Recovering from setbacks",
    "Reflecting on mentorship",
]

# (question, scripted scorer reply) per segment; strengths work out to
# [8.0, 5.0, 1.0] -> quotas [3, 2, 1] at T=6.
SEGMENT_CANDIDATES = [
    [
        ("How should a newcomer choose a first research direction?", 9),
        ("What habits make early projects succeed?", 9),
        ("Why does curiosity matter more than credentials?", 8),
        ("Who should a student ask for feedback first?", 8),
    ],
    [
        ("What is a healthy response to a rejected submission?", 5),
        ("How can setbacks be reframed as training?", 5),
        ("When should someone ask a mentor for help?", 5),
        ("Which routines protect motivation during failure?", 5),
    ],
    [
        ("How do mentors model resilience for students?", 9),
        ("What snack fuels long study nights?", 1),
        ("Why does reflection deepen learning?", 9),
        ("Which folder color is best for notes?", 1),
    ],
]

SINGLE_PAIRS = [
    (f"What lesson {i} does the conversation teach?", f"It teaches patience and practice, lesson {i}.")
    for i in range(1, FIXTURE_T + 1)
]

DUAL_PAIRS = [
    [
        ("What does the opening advise about direction?", "Pick problems you can stay curious about."),
        ("How early should students seek feedback?", "Before the work feels polished."),
    ],
    [
        ("How should a rejection be processed?", "Treat it as structured training, not a verdict."),
        ("What keeps motivation steady?", "Small routines that survive bad weeks."),
    ],
    [
        ("What makes reflection valuable?", "It turns experience into reusable judgment."),
        ("How do mentors show resilience?", "By narrating their own recoveries honestly."),
    ],
]

RAG_QUESTIONS = [
    "What overall guidance does the speaker give to beginners?",
    "How does the conversation frame failure?",
    "What role do mentors play in steady progress?",
    "Which habits does the speaker recommend keeping?",
    "How is reflection described in the discussion?",
    "What final advice closes the conversation?",
]


def fixture_lines(video_id: str, n: int = 12) -> list[str]:
    return [f"Utterance {k:02d} {video_id} shares mentorship advice number {k}." for k in range(1, n + 1)]


def make_transcript(video_id: str = "vid01", language: str = "en", n: int = 12) -> Transcript:
    return Transcript(meta=VideoMeta(video_id=video_id, language=language), lines=fixture_lines(video_id, n))


def chunking_json() -> str:
    return json.dumps(
        [
            {"topic": topic, "start_line": start, "end_line": end}
            for topic, (start, end) in zip(SEGMENT_TOPICS, SEGMENT_BOUNDS)
        ]
    )


def build_pipeline_rules() -> list[MockRule]:
    rules = [
        MockRule("Output a JSON list of dictionaries", [chunking_json()]),
    ]
    # Brainstorming: keyed on the first line of each segment.
    for (start, _end), candidates in zip(SEGMENT_BOUNDS, SEGMENT_CANDIDATES):
        rules.append(
            MockRule(
                f"Text Segment: Utterance {start:02d}",
                [format_numbered_list([q for q, _ in candidates])],
            )
        )
    # Scoring: keyed on the exact candidate question.
    for candidates in SEGMENT_CANDIDATES:
        for question, score in candidates:
            rules.append(MockRule(f"excellent). Question: {question}", [str(score)]))
    # Justification, split by status.
    rules.append(
        MockRule("Selection Status:** Selected", ["Addresses a core mentorship concern directly."])
    )
    rules.append(
        MockRule("Selection Status:** Rejected", ["Covered better by a stronger question in this topic."])
    )
    # Grounded answering, keyed per question.
    for si, candidates in enumerate(SEGMENT_CANDIDATES):
        for qi, (question, _) in enumerate(candidates):
            rules.append(
                MockRule(
                    ["Based on the context above", f"**Question:** {question}"],
                    [f"Grounded guidance for segment {si + 1}, candidate {qi + 1}."],
                )
            )
    # Single-agent (the "or part" tail distinguishes it from the dual prompt).
    rules.append(
        MockRule("any single section or part", [format_qa_list(SINGLE_PAIRS)])
    )
    # Dual-agent per-segment generation.
    for (start, _end), pairs in zip(SEGMENT_BOUNDS, DUAL_PAIRS):
        rules.append(
            MockRule(
                ["in this chunk", f"Transcript: Utterance {start:02d}"],
                [format_qa_list(pairs)],
            )
        )
    # RAG question generation and per-question answering.
    rules.append(
        MockRule("diverse and high-value questions", [format_numbered_list(RAG_QUESTIONS)])
    )
    for i, question in enumerate(RAG_QUESTIONS, start=1):
        rules.append(
            MockRule(
                ["context provided below", f"Question: {question}"],
                [f"Retrieved answer {i} grounded in the transcript."],
            )
        )
    return rules


@pytest.fixture(scope="session")
def pipeline_mock():
    server = MockLLMServer(rules=build_pipeline_rules(), embed_dimension=8)
    server.start()
    yield server
    server.stop()


@pytest.fixture()
def gw():
    gateway = Gateway(backoff_base=0.0)
    yield gateway
    gateway.close()


def write_fixture_corpus(directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for video_id, language in (("vid01", "en"), ("vid02", "zh")):
        (directory / f"{video_id}.txt").write_text(
            "\n".join(fixture_lines(video_id)) + "\n", encoding="utf-8"
        )
        (directory / f"{video_id}.meta.json").write_text(
            json.dumps({"video_id": video_id, "language": language}), encoding="utf-8"
        )
    return directory


@pytest.fixture()
def fixture_corpus(tmp_path: Path) -> Path:
    return write_fixture_corpus(tmp_path / "corpus")


def write_fixture_config(path: Path, base_url: str, target: int = FIXTURE_T) -> Path:
    path.write_text(
        f"""
seed = 7

[paths]
corpus_dir = "corpus"
output_dir = "out"

[endpoint.generator]
base_url = "{base_url}"
model_id = "mock-model"
max_concurrency = 4
timeout_seconds = 30
max_retries = 2

[endpoint.embedder]
base_url = "{base_url}"
model_id = "mock-embed"
max_concurrency = 4
timeout_seconds = 30
max_retries = 2

[pipeline]
target_questions = {target}
brainstorm_per_segment = 8
rag_top_k = 3

[index]
chunk_target_chars = 160
chunk_overlap_chars = 40
top_k = 3
""",
        encoding="utf-8",
    )
    return path


@pytest.fixture()
def fixture_config(tmp_path: Path, pipeline_mock) -> Path:
    return write_fixture_config(tmp_path / "run.toml", pipeline_mock.base_url)


def build_sample_pool(languages=("en", "zh", "hi", "ro"), videos=6, per_cell=4):
    """A pair pool large enough for the reference 4x5x4x3 sampling design."""
    from guideqa.corpus import QAPair

    pairs = []
    for lang in languages:
        for v in range(videos):
            video_id = f"{lang}-vid{v:02d}"
            for pipeline in ("single", "dual", "rag", "multi"):
                for k in range(per_cell):
                    pairs.append(
                        QAPair(
                            pair_id=f"{video_id}-{pipeline}-q{k:04d}",
                            video_id=video_id,
                            language=lang,
                            pipeline=pipeline,
                            question=f"Q {k}?",
                            answer=f"A {k}.",
                        )
                    )
    return pairs
