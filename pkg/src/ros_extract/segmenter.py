"""Locate the Review of Systems section of a note from a header lexicon."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator

from .domain import ClinicalNote, Span

DEFAULT_LEXICON = "section_headers.txt"


@dataclass(frozen=True)
class HeaderLexicon:
    """Uppercase section headers; ``ros_headers`` is a subset of ``all_headers``."""

    ros_headers: tuple[str, ...]
    all_headers: tuple[str, ...]

    def __post_init__(self) -> None:
        ros = tuple(h.strip().upper() for h in self.ros_headers)
        every = tuple(dict.fromkeys(h.strip().upper() for h in (*self.all_headers, *ros)))
        if not ros:
            raise ValueError("lexicon has no ROS headers")
        if any(not h for h in every):
            raise ValueError("lexicon contains an empty header")
        # longest first so "ASSESSMENT AND PLAN" wins over "ASSESSMENT"
        object.__setattr__(self, "ros_headers", tuple(sorted(ros, key=len, reverse=True)))
        object.__setattr__(self, "all_headers", tuple(sorted(every, key=len, reverse=True)))

    @classmethod
    def parse(cls, text: str) -> HeaderLexicon:
        ros: list[str] = []
        every: list[str] = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("*"):
                line = line[1:].strip()
                ros.append(line)
            every.append(line)
        return cls(tuple(ros), tuple(every))

    @classmethod
    def from_file(cls, path: str | Path) -> HeaderLexicon:
        return cls.parse(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> HeaderLexicon:
        return cls.parse((resources.files(__package__) / "resources" / DEFAULT_LEXICON).read_text("utf-8"))


@dataclass(frozen=True)
class RosSegment:
    header_span: Span
    body_span: Span

    def body(self, text: str) -> str:
        return self.body_span.of(text)


@dataclass(frozen=True)
class _Header:
    line_start: int
    span: Span  # header text, including the colon when present
    body_start: int
    is_ros: bool


def _lines(text: str) -> Iterator[tuple[int, str]]:
    pos = 0
    for line in text.split("\n"):
        yield pos, line
        pos += len(line) + 1


def _match_header(line: str, headers: tuple[str, ...]) -> tuple[str, bool] | None:
    """Return (matched entry, has_colon) if ``line`` opens a section."""
    stripped = line.lstrip()
    for entry in headers:
        head = stripped[: len(entry)]
        if len(head) != len(entry) or head.casefold() != entry.casefold():
            continue
        rest = stripped[len(entry) :]
        if rest.startswith(":"):
            return entry, True
        if not rest.strip():
            return entry, False
    return None


def find_headers(text: str, lexicon: HeaderLexicon) -> list[_Header]:
    ros = set(lexicon.ros_headers)
    found = []
    for pos, line in _lines(text):
        hit = _match_header(line, lexicon.all_headers)
        if hit is None:
            continue
        entry, colon = hit
        start = pos + len(line) - len(line.lstrip())
        end = start + len(entry) + (1 if colon else 0)
        body_start = end if colon else min(pos + len(line) + 1, len(text))
        found.append(_Header(pos, Span(start, end), body_start, entry in ros))
    return found


def segment_ros(note: ClinicalNote | str, lexicon: HeaderLexicon) -> RosSegment | None:
    """Find the first ROS section of a note.

    A header is a line whose first non-blank characters are a lexicon entry
    followed by a colon or the end of the line. The body runs from just after
    the header delimiter to the line break before the next header (of any
    kind), or to the end of the note.

    Returns:
        The segment, or ``None`` when no ROS header is present.
    """
    text = note.text if isinstance(note, ClinicalNote) else note
    headers = find_headers(text, lexicon)
    for i, header in enumerate(headers):
        if not header.is_ros:
            continue
        if i + 1 < len(headers):
            end = headers[i + 1].line_start
            if end > 0 and text[end - 1] == "\n":
                end -= 1
                if end > 0 and text[end - 1] == "\r":
                    end -= 1
        else:
            end = len(text)
        start = header.body_start
        return RosSegment(header.span, Span(start, max(start, end)))
    return None
