"""Core data types shared by every stage: notes, spans, labels, gold corpora.

Offsets are Unicode code-point positions into ``ClinicalNote.text`` (Python
``str`` indexing), never byte offsets.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable


class CorpusError(ValueError):
    """Raised when notes or gold annotations fail to load or validate."""


class Status(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"

    @classmethod
    def parse(cls, value: str) -> Status:
        """Case-insensitive parse. Anything but positive/negative is an error."""
        if not isinstance(value, str):
            raise ValueError(f"status must be a string, got {value!r}")
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"invalid status {value!r}") from None


class BodySystem(str, Enum):
    CONSTITUTIONAL = "constitutional"
    EYES = "eyes"
    ENT = "ent"
    CARDIOVASCULAR = "cardiovascular"
    RESPIRATORY = "respiratory"
    HEMATOLOGIC_LYMPHATIC = "hematologic_lymphatic"
    GASTROINTESTINAL = "gastrointestinal"
    GENITOURINARY = "genitourinary"
    MUSCULOSKELETAL = "musculoskeletal"
    INTEGUMENTARY = "integumentary"
    NEUROLOGICAL = "neurological"
    PSYCHIATRIC = "psychiatric"
    ENDOCRINE = "endocrine"
    ALLERGIC_IMMUNOLOGIC = "allergic_immunologic"


class Unclassified(Enum):
    """Category outcomes that do not name one of the 14 body systems."""

    NONE = "none"  # the model answered the literal "None"
    INVALID = "invalid"  # some other string outside the alias table


def _alias_key(text: str) -> str:
    # upper() first so that s and s.upper() always share a key ("ı" -> "I")
    return re.sub(r"\s+", " ", text.strip()).upper().casefold()


# Prompt-facing category strings and the usual clinical spellings both
# resolve here; canonical ids and their display names map to themselves.
_SYSTEM_ALIASES: dict[str, BodySystem] = {
    "Constitutional Symptoms": BodySystem.CONSTITUTIONAL,
    "Constitutional": BodySystem.CONSTITUTIONAL,
    "Eyes": BodySystem.EYES,
    "ENT (Ears, Nose, Throat)": BodySystem.ENT,
    "ENT (Ears, Nose, Mouth, and Throat)": BodySystem.ENT,
    "ENT": BodySystem.ENT,
    "Cardiovascular": BodySystem.CARDIOVASCULAR,
    "Respiratory": BodySystem.RESPIRATORY,
    "Hematologic/Lymphatic": BodySystem.HEMATOLOGIC_LYMPHATIC,
    "Gastrointestinal": BodySystem.GASTROINTESTINAL,
    "Genitourinary": BodySystem.GENITOURINARY,
    "Musculoskeletal": BodySystem.MUSCULOSKELETAL,
    "Integumentary/Breast": BodySystem.INTEGUMENTARY,
    "Integumentary": BodySystem.INTEGUMENTARY,
    "Neurological": BodySystem.NEUROLOGICAL,
    "Psychiatric": BodySystem.PSYCHIATRIC,
    "Endocrine": BodySystem.ENDOCRINE,
    "Allergic/Immunologic": BodySystem.ALLERGIC_IMMUNOLOGIC,
}
SYSTEM_ALIASES: dict[str, BodySystem] = {_alias_key(k): v for k, v in _SYSTEM_ALIASES.items()}
SYSTEM_ALIASES.update({_alias_key(s.value): s for s in BodySystem})


def canonicalize_system(category: str) -> BodySystem | Unclassified:
    """Resolve a classification category string to a canonical body system.

    Matching is case-insensitive and ignores surrounding/repeated whitespace.
    The literal ``"None"`` yields ``Unclassified.NONE``; every other
    unresolvable string yields ``Unclassified.INVALID``.
    """
    key = _alias_key(category)
    if key == "none":
        return Unclassified.NONE
    return SYSTEM_ALIASES.get(key, Unclassified.INVALID)


@dataclass(frozen=True, order=True)
class Span:
    """Half-open character interval ``[start, end)`` into a note's text."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"invalid span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start

    def overlap(self, other: Span) -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))

    def of(self, text: str) -> str:
        return text[self.start : self.end]


@dataclass(frozen=True)
class ClinicalNote:
    note_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.note_id:
            raise ValueError("note_id must be non-empty")


@dataclass(frozen=True)
class Annotation:
    span: Span
    surface: str
    status: Status
    system: BodySystem


@dataclass(frozen=True)
class Detection:
    """One entity reported by the pipeline.

    ``system`` stays ``None`` for detections that failed the valid-system
    check; ``span`` stays ``None`` when the extract could not be located.
    """

    extract: str
    status: Status
    system: BodySystem | None = None
    span: Span | None = None
    raw_ner: str = ""
    raw_cls: str | None = None


@dataclass(frozen=True)
class Corpus:
    notes: tuple[ClinicalNote, ...]
    annotations: dict[str, tuple[Annotation, ...]] = field(default_factory=dict)

    def annotations_for(self, note_id: str) -> tuple[Annotation, ...]:
        return self.annotations.get(note_id, ())

    def note(self, note_id: str) -> ClinicalNote:
        for note in self.notes:
            if note.note_id == note_id:
                return note
        raise KeyError(note_id)

    @property
    def total_annotations(self) -> int:
        return sum(len(a) for a in self.annotations.values())

    @property
    def total_labels(self) -> int:
        # status + body system per annotation
        return 2 * self.total_annotations


def read_note_text(path: Path) -> str:
    # decode bytes directly so CRLF survives and offsets match the file
    return path.read_bytes().decode("utf-8")


def load_notes(notes_dir: str | Path) -> list[ClinicalNote]:
    notes_dir = Path(notes_dir)
    if not notes_dir.is_dir():
        raise CorpusError(f"notes directory not found: {notes_dir}")
    notes = [ClinicalNote(p.stem, read_note_text(p)) for p in notes_dir.glob("*.txt")]
    notes.sort(key=lambda n: n.note_id)
    return notes


def _parse_annotation(note: ClinicalNote, raw: dict, where: str) -> Annotation:
    try:
        start, end = raw["start"], raw["end"]
        surface = raw["surface"]
        status = Status.parse(raw["status"])
        system = BodySystem(raw["system"])
    except KeyError as e:
        raise CorpusError(f"{where}: missing field {e.args[0]!r}") from None
    except ValueError as e:
        raise CorpusError(f"{where}: {e}") from None
    if not (isinstance(start, int) and isinstance(end, int)) or not 0 <= start < end <= len(note.text):
        raise CorpusError(
            f"{where}: offsets [{start}, {end}) out of range for note {note.note_id!r} "
            f"(length {len(note.text)})"
        )
    found = note.text[start:end]
    if found != surface:
        raise CorpusError(
            f"{where}: surface mismatch in note {note.note_id!r} at [{start}, {end}): "
            f"expected {surface!r}, found {found!r}"
        )
    return Annotation(Span(start, end), surface, status, system)


def load_annotations(path: str | Path, notes: Iterable[ClinicalNote]) -> dict[str, tuple[Annotation, ...]]:
    by_id = {n.note_id: n for n in notes}
    path = Path(path)
    out: dict[str, tuple[Annotation, ...]] = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CorpusError(f"cannot read annotations file {path}: {e}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        where = f"{path.name}:{lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"{where}: invalid JSON ({e})") from None
        note_id = record.get("note_id")
        if note_id not in by_id:
            raise CorpusError(f"{where}: no note file for note_id {note_id!r}")
        if note_id in out:
            raise CorpusError(f"{where}: duplicate record for note_id {note_id!r}")
        anns = [_parse_annotation(by_id[note_id], e, where) for e in record.get("entities", [])]
        anns.sort(key=lambda a: a.span)
        for prev, cur in zip(anns, anns[1:]):
            if prev.span.overlap(cur.span):
                raise CorpusError(
                    f"{where}: overlapping annotations in note {note_id!r}: "
                    f"[{prev.span.start}, {prev.span.end}) and [{cur.span.start}, {cur.span.end})"
                )
        out[note_id] = tuple(anns)
    return out


def load_corpus(notes_dir: str | Path, annotations_file: str | Path) -> Corpus:
    """Load plain-text notes plus their JSON Lines gold annotations.

    Every annotation is checked against its note text; notes are returned
    sorted by ``note_id``. Notes without an annotation record carry none.
    """
    notes = load_notes(notes_dir)
    annotations = load_annotations(annotations_file, notes)
    return Corpus(tuple(notes), annotations)


def annotation_record(note_id: str, annotations: Iterable[Annotation]) -> dict:
    return {
        "note_id": note_id,
        "entities": [
            {
                "start": a.span.start,
                "end": a.span.end,
                "surface": a.surface,
                "status": a.status.value,
                "system": a.system.value,
            }
            for a in annotations
        ],
    }


def dump_annotations(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for note in corpus.notes:
            record = annotation_record(note.note_id, corpus.annotations_for(note.note_id))
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
