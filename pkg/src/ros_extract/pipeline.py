"""The two LLM stages: entity recognition and body-system classification.

A note flows through ``segment_ros`` -> one recognition request ->
``parse_entities`` -> ``locate_span`` per entity -> one classification request
per entity -> ``valid_system_filter``.
"""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Union

from .backend import Backend, BackendError, ChatRequest, GenerationConfig
from .domain import BodySystem, ClinicalNote, Detection, Span, Status, Unclassified, canonicalize_system
from .segmenter import HeaderLexicon, RosSegment, segment_ros

NER_PROMPT = "ner_system_prompt.txt"
CLS_PROMPT = "cls_system_prompt.txt"
NER_INSTRUCTION = "Extract the ROS entities from the text above. Output in JSON format."


class ParseError(ValueError):
    kind = "ParseError"


class NoJsonFound(ParseError):
    kind = "NoJsonFound"


class ElementMalformed(ParseError):
    kind = "ElementMalformed"

    def __init__(self, index: int, reason: str):
        self.index = index
        self.reason = reason
        super().__init__(f"element {index}: {reason}")


class InvalidStatus(ParseError):
    kind = "InvalidStatus"

    def __init__(self, value: str, index: int | None = None):
        self.value = value
        self.index = index
        super().__init__(f"invalid status {value!r}" + (f" at element {index}" if index is not None else ""))


class NoPatternFound(ParseError):
    kind = "NoPatternFound"

    def __init__(self, response: str):
        self.response = response
        super().__init__(f"no '<entity> --> <category>' line in response {response[:80]!r}")


# --------------------------------------------------------------------------
# prompts


def _resource(name: str) -> str:
    return (resources.files(__package__) / "resources" / name).read_text("utf-8")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@lru_cache(maxsize=None)
def shipped_checksums() -> dict[str, str]:
    sums = {}
    for line in _resource("SHA256SUMS").splitlines():
        if line.strip():
            digest, name = line.split()
            sums[name] = digest
    return sums


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    text = _resource(name)
    expected = shipped_checksums().get(name)
    if expected != sha256_text(text):
        raise RuntimeError(f"prompt resource {name} does not match its shipped checksum")
    return text


def prompt_checksums() -> dict[str, str]:
    return {name: sha256_text(load_prompt(name)) for name in (NER_PROMPT, CLS_PROMPT)}


def build_ner_prompt(ros_text: str) -> ChatRequest:
    text = ros_text.strip()
    if not text:
        raise ValueError("ROS section text is empty")
    return ChatRequest(load_prompt(NER_PROMPT), f"{text}\n\n{NER_INSTRUCTION}")


def build_cls_prompt(extract: str) -> ChatRequest:
    text = extract.strip()
    if not text:
        raise ValueError("extract is empty")
    return ChatRequest(load_prompt(CLS_PROMPT), text)


# --------------------------------------------------------------------------
# recognition output


@dataclass(frozen=True)
class RawEntity:
    extract: str
    status: Status
    raw: str = field(default="", compare=False)


def _bracket_end(text: str, start: int) -> int | None:
    """Index of the ``]`` closing the ``[`` at ``start``, skipping JSON strings."""
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
            if depth == 0:
                return i if ch == "]" else None
            if depth < 0:
                return None
    return None


_TRAILING_COMMA = re.compile(r",(\s*[\]}])")


def find_json_array(text: str) -> list:
    """Return the first balanced ``[...]`` group in ``text`` that parses as JSON.

    Prose and code fences around the array are ignored. A trailing comma
    before a closing bracket is tolerated; nothing else is repaired.
    """
    pos = 0
    while True:
        start = text.find("[", pos)
        if start < 0:
            raise NoJsonFound("no JSON array in response")
        end = _bracket_end(text, start)
        if end is None:
            pos = start + 1
            continue
        candidate = text[start : end + 1]
        for attempt in (candidate, _TRAILING_COMMA.sub(r"\1", candidate)):
            try:
                value = json.loads(attempt)
            except json.JSONDecodeError:
                continue
            if isinstance(value, list):
                return value
        pos = end + 1


def parse_entities(response_text: str) -> list[RawEntity]:
    items = find_json_array(response_text)
    entities: list[RawEntity] = []
    seen: set[tuple[str, Status]] = set()
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ElementMalformed(i, f"expected an object, got {type(item).__name__}")
        extract, status = item.get("extract"), item.get("status")
        if not isinstance(extract, str):
            raise ElementMalformed(i, "missing or non-string 'extract'")
        if not isinstance(status, str):
            raise ElementMalformed(i, "missing or non-string 'status'")
        if not extract.strip():
            raise ElementMalformed(i, "empty 'extract'")
        try:
            parsed = Status.parse(status)
        except ValueError:
            raise InvalidStatus(status, i) from None
        key = (extract.strip(), parsed)
        if key in seen:
            continue
        seen.add(key)
        entities.append(RawEntity(key[0], parsed, json.dumps(item, ensure_ascii=False)))
    return entities


# --------------------------------------------------------------------------
# span localization


@dataclass
class SpanCursor:
    """Regions of one ROS body already claimed by earlier extracts."""

    consumed: list[Span] = field(default_factory=list)

    def is_free(self, span: Span) -> bool:
        return not any(span.overlap(c) for c in self.consumed)

    def consume(self, span: Span) -> None:
        self.consumed.append(span)


def _stem(token: str) -> str:
    return token[:-1] if len(token) > 1 and token[-1] in "sS" else token


def _search_patterns(extract: str) -> list[str]:
    tokens = extract.split()
    exact = re.escape(extract)
    spaced = r"\s+".join(re.escape(t) for t in tokens)
    stemmed = r"\s+".join(re.escape(_stem(t)) + "s?" for t in tokens)
    return [exact, spaced, stemmed]


def _first_free(pattern: re.Pattern, text: str, lo: int, hi: int, cursor: SpanCursor) -> Span | None:
    pos = lo
    while True:
        m = pattern.search(text, pos, hi)
        if m is None:
            return None
        span = Span(m.start(), m.end())
        if cursor.is_free(span):
            return span
        pos = m.start() + 1


def locate_span(extract: str, segment: RosSegment, note_text: str, cursor: SpanCursor) -> Span | None:
    """Anchor a model extract to note offsets inside the ROS body.

    Tries, in order: case-insensitive substring, whitespace-insensitive
    match, and a match ignoring a trailing "s" on each token. Within each
    tier a whole-word occurrence is preferred over one inside a longer word.
    The earliest occurrence not overlapping an already consumed region wins
    and is consumed.
    """
    extract = extract.strip()
    if not extract:
        return None
    lo, hi = segment.body_span.start, segment.body_span.end
    for body in _search_patterns(extract):
        for pattern in (rf"(?<!\w){body}(?!\w)", body):
            span = _first_free(re.compile(pattern, re.IGNORECASE), note_text, lo, hi, cursor)
            if span is not None:
                cursor.consume(span)
                return span
    return None


# --------------------------------------------------------------------------
# classification output

_ARROW = re.compile(r"^(.*?)-->(.*)$")
_WRAPPING = " \t\"'`*"


def parse_system(response_text: str) -> str | Unclassified:
    """Extract the category from a ``<entity> --> <category>`` response.

    The last matching line wins. Returns ``Unclassified.NONE`` when the model
    answered "None", either after the arrow or as the whole response.
    """
    category = None
    for line in response_text.splitlines():
        m = _ARROW.match(line.strip())
        if m:
            category = m.group(2)
    if category is None:
        if response_text.strip().strip(_WRAPPING).casefold() == "none":
            return Unclassified.NONE
        raise NoPatternFound(response_text)
    category = category.strip(_WRAPPING + ".")
    if category.casefold() == "none":
        return Unclassified.NONE
    return category


class ClassificationFailure(Enum):
    NO_PATTERN = "no_pattern"
    BACKEND_ERROR = "backend_error"


Outcome = Union[str, Unclassified, ClassificationFailure]


@dataclass(frozen=True)
class Discarded:
    detection: Detection
    reason: str
    category: str | None = None


def valid_system_filter(candidates: Iterable[tuple[Detection, Outcome]]) -> tuple[list[Detection], list[Discarded]]:
    """Keep detections whose category resolves to one of the 14 systems.

    ``candidates`` pairs each detection with its classification outcome: a
    category string from ``parse_system``, ``Unclassified.NONE``, or a
    ``ClassificationFailure``. Everything not kept is returned with a reason.
    """
    kept: list[Detection] = []
    discarded: list[Discarded] = []
    for det, outcome in candidates:
        if isinstance(outcome, (Unclassified, ClassificationFailure)):
            discarded.append(Discarded(det, outcome.value))
            continue
        system = canonicalize_system(outcome)
        if isinstance(system, BodySystem):
            kept.append(replace(det, system=system))
        else:
            discarded.append(Discarded(det, system.value, outcome))
    return kept, discarded


# --------------------------------------------------------------------------
# per-note orchestration


@dataclass(frozen=True)
class StageError:
    stage: str  # "ner" | "classify"
    kind: str
    message: str
    extract: str | None = None

    def to_dict(self) -> dict:
        d = {"stage": self.stage, "kind": self.kind, "message": self.message}
        if self.extract is not None:
            d["extract"] = self.extract
        return d


@dataclass(frozen=True)
class PipelineOutput:
    note_id: str
    ros_found: bool
    detections: tuple[Detection, ...] = ()
    discarded: tuple[Discarded, ...] = ()
    stage_errors: tuple[StageError, ...] = ()

    def to_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "ros_found": self.ros_found,
            "detections": [_detection_dict(d) for d in self.detections],
            "discarded": [_discarded_dict(d) for d in self.discarded],
            "stage_errors": [e.to_dict() for e in self.stage_errors],
        }

    @classmethod
    def from_dict(cls, d: dict) -> PipelineOutput:
        detections = tuple(_detection_from(x) for x in d.get("detections", []))
        discarded = tuple(
            Discarded(_detection_from(x), x["reason"], x.get("category")) for x in d.get("discarded", [])
        )
        errors = tuple(
            StageError(e["stage"], e["kind"], e["message"], e.get("extract")) for e in d.get("stage_errors", [])
        )
        return cls(d["note_id"], bool(d["ros_found"]), detections, discarded, errors)


def _span_fields(det: Detection) -> dict:
    return {"start": det.span.start, "end": det.span.end} if det.span is not None else {}


def _detection_dict(det: Detection) -> dict:
    return {
        "extract": det.extract,
        "status": det.status.value,
        "system": det.system.value if det.system else None,
        **_span_fields(det),
    }


def _discarded_dict(item: Discarded) -> dict:
    det = item.detection
    return {
        "extract": det.extract,
        "status": det.status.value,
        "reason": item.reason,
        "category": item.category,
        "raw_cls": det.raw_cls,
        **_span_fields(det),
    }


def _detection_from(d: dict) -> Detection:
    span = Span(d["start"], d["end"]) if "start" in d and "end" in d else None
    system = BodySystem(d["system"]) if d.get("system") else None
    return Detection(d["extract"], Status.parse(d["status"]), system, span, raw_cls=d.get("raw_cls"))


def classify(extract: str, backend: Backend, config: GenerationConfig) -> tuple[Outcome, str | None, StageError | None]:
    """Run one classification request; never raises for backend or parse failures."""
    try:
        response = backend.complete(build_cls_prompt(extract), config)
    except BackendError as e:
        return ClassificationFailure.BACKEND_ERROR, None, StageError("classify", e.kind, str(e), extract)
    try:
        return parse_system(response), response, None
    except NoPatternFound as e:
        return ClassificationFailure.NO_PATTERN, response, StageError("classify", e.kind, str(e), extract)


def run_note(
    note: ClinicalNote,
    backend: Backend,
    config: GenerationConfig,
    lexicon: HeaderLexicon,
) -> PipelineOutput:
    segment = segment_ros(note, lexicon)
    if segment is None:
        return PipelineOutput(note.note_id, ros_found=False)

    try:
        request = build_ner_prompt(segment.body(note.text))
    except ValueError as e:
        return PipelineOutput(note.note_id, True, stage_errors=(StageError("ner", "EmptySection", str(e)),))
    try:
        response = backend.complete(request, config)
        entities = parse_entities(response)
    except (BackendError, ParseError) as e:
        return PipelineOutput(note.note_id, True, stage_errors=(StageError("ner", e.kind, str(e)),))

    cursor = SpanCursor()
    candidates = []
    errors = []
    for ent in entities:
        span = locate_span(ent.extract, segment, note.text, cursor)
        outcome, raw_cls, error = classify(ent.extract, backend, config)
        if error is not None:
            errors.append(error)
        candidates.append((Detection(ent.extract, ent.status, None, span, ent.raw, raw_cls), outcome))

    kept, discarded = valid_system_filter(candidates)
    return PipelineOutput(note.note_id, True, tuple(kept), tuple(discarded), tuple(errors))


def run_corpus(
    notes: Iterable[ClinicalNote],
    backend: Backend,
    config: GenerationConfig,
    lexicon: HeaderLexicon,
    workers: int = 4,
) -> list[PipelineOutput]:
    """Process notes concurrently; results come back sorted by note_id."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    notes = list(notes)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outputs = list(pool.map(lambda n: run_note(n, backend, config, lexicon), notes))
    return sorted(outputs, key=lambda o: o.note_id)


def dumps_output(output: PipelineOutput) -> str:
    return json.dumps(output.to_dict(), ensure_ascii=False)


def write_outputs(outputs: Iterable[PipelineOutput], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for output in outputs:
            f.write(dumps_output(output) + "\n")


def read_outputs(path: str | Path) -> list[PipelineOutput]:
    outputs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                outputs.append(PipelineOutput.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}:{lineno}: bad pipeline output record ({e!r})") from None
    return outputs
