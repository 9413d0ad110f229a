"""Repairing parsers for the structured text the generation agents emit.

Each parser is strict about the target shape but tolerant of the usual model
drift: code fences, surrounding prose, renumbered or skipped indices. Every
deviation that gets repaired is recorded on the outcome so callers can audit
how dirty a run was.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional


class ParseError(Exception):
    """Base class for unrecoverable parse failures."""


class NoPairsFound(ParseError):
    pass


class NoItemsFound(ParseError):
    pass


class NoNumberFound(ParseError):
    pass


class Unparseable(ParseError):
    pass


@dataclass
class ParseOutcome:
    """Parsed payload plus the list of repairs that were needed to get it."""

    value: object
    repairs: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.repairs


@dataclass
class SegmentEntry:
    topic: str
    start_line: int
    end_line: int


@dataclass
class RawSegmentation:
    entries: list[SegmentEntry]


_QA_MARKER = re.compile(
    r"^[ \t]*(?:[*_#]+\s*)?(Question|Answer)\s*(\d+)\s*[:.）)]?[*_]*[ \t]*",
    re.IGNORECASE | re.MULTILINE,
)


def _strip_md_wrap(s: str) -> str:
    """Strip *balanced* emphasis wrappers only, so ordinary trailing
    punctuation survives a round trip."""
    for wrap in ("**", "__", "*", "_"):
        while s.startswith(wrap) and s.endswith(wrap) and len(s) > 2 * len(wrap):
            s = s[len(wrap) : -len(wrap)].strip()
    return s


def parse_qa_list(text: str, expected_n: Optional[int] = None) -> ParseOutcome:
    """Extract (question, answer) pairs marked 'Question N:' / 'Answer N:'.

    Pairs are matched by index. Questions lacking a same-index answer are
    dropped with a recorded repair; indices need not be contiguous.
    """
    repairs: list[str] = []
    questions: dict[int, str] = {}
    answers: dict[int, str] = {}

    matches = list(_QA_MARKER.finditer(text))
    for pos, m in enumerate(matches):
        end = matches[pos + 1].start() if pos + 1 < len(matches) else len(text)
        content = _strip_md_wrap(text[m.end() : end].strip())
        kind = m.group(1).lower()
        index = int(m.group(2))
        bucket = questions if kind == "question" else answers
        if index in bucket:
            repairs.append(f"duplicate {kind} index {index}; kept the first")
            continue
        bucket[index] = content

    pairs = []
    expected_index = 1
    for index in sorted(questions):
        if index not in answers:
            repairs.append(f"question {index} has no matching answer; dropped")
            continue
        q, a = questions[index], answers[index]
        if not q or not a:
            repairs.append(f"pair {index} has an empty question or answer; dropped")
            continue
        if index != expected_index:
            repairs.append(f"non-contiguous index {index} renumbered to {expected_index}")
        pairs.append((q, a))
        expected_index += 1
    for index in sorted(set(answers) - set(questions)):
        repairs.append(f"answer {index} has no matching question; ignored")

    if not pairs:
        raise NoPairsFound("no question-answer pairs could be extracted")
    if expected_n is not None and len(pairs) != expected_n:
        repairs.append(f"expected {expected_n} pairs but parsed {len(pairs)}")
    return ParseOutcome(value=pairs, repairs=repairs)


def format_qa_list(pairs: list[tuple[str, str]]) -> str:
    """Inverse of parse_qa_list for well-behaved single-line strings."""
    chunks = []
    for i, (q, a) in enumerate(pairs, start=1):
        chunks.append(f"Question {i}: {q}")
        chunks.append(f"Answer {i}: {a}")
    return "\n".join(chunks)


_FENCE = re.compile(r"```[a-zA-Z]*\n?|```")


def _extract_json_array(text: str) -> tuple[Optional[list], list[str]]:
    """Pull a JSON array out of raw model output, recording any repair."""
    try:
        data = json.loads(text.strip())
    except json.JSONDecodeError:
        data = None
    if isinstance(data, list):
        return data, []
    if isinstance(data, dict):
        return [data], ["single JSON object wrapped into an array"]

    repair = ["extracted JSON from surrounding prose or code fences"]
    stripped = _FENCE.sub("", text)
    try:
        data = json.loads(stripped.strip())
    except json.JSONDecodeError:
        data = None
    if isinstance(data, list):
        return data, repair
    if isinstance(data, dict):
        return [data], repair

    # Fall back to the first balanced [...] block.
    start = stripped.find("[")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(stripped)):
            ch = stripped[i]
            if escaped:
                escaped = False
                continue
            if ch == "\\":
                escaped = in_string
                continue
            if ch == '"':
                in_string = not in_string
                continue
            if in_string:
                continue
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
                if depth == 0:
                    try:
                        data = json.loads(stripped[start : i + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(data, list):
                        return data, repair
                    break
        start = stripped.find("[", start + 1)
    return None, []


def _coerce_int(value) -> Optional[int]:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        m = re.search(r"-?\d+", value)
        if m:
            return int(m.group())
    return None


def parse_segmentation(text: str, total_lines: int) -> ParseOutcome:
    """Parse topic/start_line/end_line entries and repair them into an exact
    tiling of 1..total_lines.

    Repairs are applied in a fixed order: clamp ranges into bounds, close gaps
    by extending the previous entry, resolve overlaps by truncating the
    earlier entry, then force the outer endpoints.
    """
    if total_lines < 1:
        raise ValueError("total_lines must be >= 1")

    data, repairs = _extract_json_array(text)
    if data is None:
        raise Unparseable("no JSON array recoverable from text")

    entries: list[SegmentEntry] = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            repairs.append(f"entry {i} is not an object; dropped")
            continue
        topic = str(item.get("topic") or "").strip()
        start = _coerce_int(item.get("start_line"))
        end = _coerce_int(item.get("end_line"))
        if start is None or end is None:
            repairs.append(f"entry {i} lacks integer line bounds; dropped")
            continue
        if not topic:
            topic = f"Segment {len(entries) + 1}"
            repairs.append(f"entry {i} has an empty topic; titled {topic!r}")
        entries.append(SegmentEntry(topic=topic, start_line=start, end_line=end))

    # Clamp into [1, total_lines].
    clamped: list[SegmentEntry] = []
    for e in entries:
        start = min(max(e.start_line, 1), total_lines)
        end = min(max(e.end_line, 1), total_lines)
        if (start, end) != (e.start_line, e.end_line):
            repairs.append(
                f"clamped {e.topic!r} from {e.start_line}..{e.end_line} to {start}..{end}"
            )
        if start > end:
            repairs.append(f"dropped {e.topic!r}: empty range after clamping")
            continue
        clamped.append(SegmentEntry(e.topic, start, end))

    if not clamped:
        raise Unparseable("no usable segmentation entries after cleaning")

    ordered = sorted(clamped, key=lambda e: (e.start_line, e.end_line))
    if ordered != clamped:
        repairs.append("entries re-sorted by start_line")

    # Close gaps, then truncate overlapping earlier entries.
    result: list[SegmentEntry] = [ordered[0]]
    for e in ordered[1:]:
        prev = result[-1]
        if e.start_line > prev.end_line + 1:
            repairs.append(
                f"gap before {e.topic!r}: extended {prev.topic!r} to end at {e.start_line - 1}"
            )
            prev.end_line = e.start_line - 1
        elif e.start_line <= prev.end_line:
            new_end = e.start_line - 1
            repairs.append(
                f"overlap with {e.topic!r}: truncated {prev.topic!r} to end at {new_end}"
            )
            if new_end < prev.start_line:
                repairs.append(f"dropped {prev.topic!r}: emptied by overlap")
                result.pop()
            else:
                prev.end_line = new_end
        result.append(e)

    if result[0].start_line != 1:
        repairs.append(f"forced first entry {result[0].topic!r} to start at line 1")
        result[0].start_line = 1
    if result[-1].end_line != total_lines:
        repairs.append(f"forced last entry {result[-1].topic!r} to end at line {total_lines}")
        result[-1].end_line = total_lines

    segmentation = RawSegmentation(entries=result)
    assert tiles_exactly(segmentation, total_lines)
    return ParseOutcome(value=segmentation, repairs=repairs)


def tiles_exactly(seg: RawSegmentation, total_lines: int) -> bool:
    """True iff the entries cover 1..total_lines contiguously with no overlap."""
    if not seg.entries:
        return False
    cursor = 1
    for e in seg.entries:
        if e.start_line != cursor or e.end_line < e.start_line:
            return False
        cursor = e.end_line + 1
    return cursor == total_lines + 1


_LIST_ITEM = re.compile(r"^[ \t]*[*_]*(\d+)\s*[.)）]\s*(.*?)[ \t]*$", re.MULTILINE)


def parse_numbered_list(text: str) -> ParseOutcome:
    """Extract items from a numbered list, stripping 'N.' / 'N)' markers."""
    repairs: list[str] = []
    items: list[str] = []
    last_index = 0
    for m in _LIST_ITEM.finditer(text):
        index = int(m.group(1))
        item = _strip_md_wrap(m.group(2).strip())
        if not item:
            repairs.append(f"item {index} is blank; dropped")
            continue
        if index != last_index + 1:
            repairs.append(f"unexpected item index {index} after {last_index}")
        last_index = index
        items.append(item)
    if not items:
        raise NoItemsFound("no numbered items found")
    return ParseOutcome(value=items, repairs=repairs)


def format_numbered_list(items: list[str]) -> str:
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, start=1))


_INT_TOKEN = re.compile(r"-?\d+")


def parse_int_score(text: str, lo: int, hi: int) -> int:
    """Return the first integer token in the text, clamped into [lo, hi]."""
    if lo >= hi:
        raise ValueError("lo must be < hi")
    m = _INT_TOKEN.search(text)
    if m is None:
        raise NoNumberFound(f"no integer in {text!r}")
    return min(max(int(m.group()), lo), hi)
