"""Loader for the agent prompt templates shipped under prompts/.

Templates are plain text with named {slot} placeholders. Substitution is a
literal token replacement (not str.format) so transcript content containing
braces can never corrupt a prompt.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

TEMPLATE_NAMES = (
    "single_agent",
    "chunking",
    "segment_qa",
    "rag_questions",
    "rag_answer",
    "brainstorm",
    "scorer",
    "justifier",
    "answering",
)

KNOWN_SLOTS = {
    "transcript",
    "numbered_transcript",
    "num_questions",
    "segment_content",
    "question",
    "context",
    "context_hint",
    "total_lines",
    "topic",
    "status",
}

_SLOT = re.compile(r"\{(" + "|".join(sorted(KNOWN_SLOTS)) + r")\}")

DEFAULT_TEMPLATE_DIR = Path(__file__).parent / "templates"


class TemplateError(Exception):
    pass


@dataclass
class PromptTemplate:
    name: str
    system: str
    user: str

    def slots(self) -> set[str]:
        return {m.group(1) for m in _SLOT.finditer(self.system + self.user)}

    def fill(self, **values) -> tuple[str, str]:
        """Return (system, user) with every placeholder substituted."""
        needed = self.slots()
        missing = needed - values.keys()
        if missing:
            raise TemplateError(f"{self.name}: missing slots {sorted(missing)}")

        def substitute(text: str) -> str:
            for slot in needed:
                text = text.replace("{" + slot + "}", str(values[slot]))
            return text

        return substitute(self.system), substitute(self.user)


class PromptLibrary:
    """All agent templates from one directory, loaded once."""

    def __init__(self, templates: dict[str, PromptTemplate]):
        self.templates = templates

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptLibrary":
        directory = Path(directory) if directory else DEFAULT_TEMPLATE_DIR
        templates = {}
        for name in TEMPLATE_NAMES:
            system_path = directory / f"{name}.system.txt"
            user_path = directory / f"{name}.user.txt"
            if not system_path.exists() or not user_path.exists():
                raise TemplateError(f"template {name!r} missing under {directory}")
            templates[name] = PromptTemplate(
                name=name,
                system=system_path.read_text(encoding="utf-8").strip("\n"),
                user=user_path.read_text(encoding="utf-8").strip("\n"),
            )
        return cls(templates)

    def get(self, name: str) -> PromptTemplate:
        try:
            return self.templates[name]
        except KeyError:
            raise TemplateError(f"unknown template {name!r}") from None

    def digest(self) -> dict[str, str]:
        """Per-template content hashes, recorded in run manifests."""
        out = {}
        for name, tpl in sorted(self.templates.items()):
            blob = (tpl.system + "\x00" + tpl.user).encode("utf-8")
            out[name] = hashlib.sha256(blob).hexdigest()[:16]
        return out
