"""Span-level scoring of detections against gold annotations.

Every detection is one of:

* exact   -- its span equals a gold span not already exactly matched;
* relaxed -- it overlaps at least one gold span (several detections may
  bind the same annotation, e.g. one mention split into two entities);
* over    -- it overlaps nothing, or could not be located at all.

A gold annotation bound by no detection is an under-detection. Label hits
are counted per bound detection against that annotation's status and
body system.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .domain import Annotation, Corpus, Detection


class MatchKind(str, Enum):
    EXACT = "exact"
    RELAXED = "relaxed"
    OVER = "over"


class DivisionUndefined(ArithmeticError):
    """Raised for an accuracy whose denominator E + R is zero."""


def canonical_order(detections: Sequence[Detection]) -> list[int]:
    """Indices of ``detections`` sorted by located start, then content.

    Unlocated detections go last. Matching in this order makes every
    counter independent of the order the model listed entities in.
    """

    def key(i: int):
        d = detections[i]
        located = d.span is not None
        return (
            not located,
            d.span.start if located else 0,
            d.span.end if located else 0,
            d.extract,
            d.status.value,
            d.system.value if d.system else "",
        )

    return sorted(range(len(detections)), key=key)


def check_disjoint(annotations: Sequence[Annotation]) -> None:
    ordered = sorted(annotations, key=lambda a: a.span)
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.span.overlap(cur.span):
            raise ValueError(
                f"gold annotations overlap: [{prev.span.start}, {prev.span.end}) "
                f"and [{cur.span.start}, {cur.span.end})"
            )


@dataclass(frozen=True)
class MatchResult:
    kinds: tuple[MatchKind, ...]  # per detection, input order
    bindings: tuple[int | None, ...]  # bound annotation index per detection
    n_annotations: int

    def count(self, kind: MatchKind) -> int:
        return sum(k is kind for k in self.kinds)

    @property
    def exact_covered(self) -> set[int]:
        return {b for k, b in zip(self.kinds, self.bindings) if k is MatchKind.EXACT}

    @property
    def covered(self) -> tuple[bool, ...]:
        bound = {b for b in self.bindings if b is not None}
        return tuple(i in bound for i in range(self.n_annotations))

    @property
    def covered_relaxed(self) -> int:
        """Annotations covered only by relaxed matches."""
        relaxed = {b for k, b in zip(self.kinds, self.bindings) if k is MatchKind.RELAXED}
        return len(relaxed - self.exact_covered)

    @property
    def under(self) -> int:
        return self.covered.count(False)


def match_detections(detections: Sequence[Detection], annotations: Sequence[Annotation]) -> MatchResult:
    check_disjoint(annotations)
    order = canonical_order(detections)
    kinds: list[MatchKind | None] = [None] * len(detections)
    bindings: list[int | None] = [None] * len(detections)

    by_span = {a.span: i for i, a in enumerate(annotations)}
    taken: set[int] = set()
    for i in order:
        span = detections[i].span
        j = by_span.get(span) if span is not None else None
        if j is not None and j not in taken:
            taken.add(j)
            kinds[i], bindings[i] = MatchKind.EXACT, j

    for i in order:
        span = detections[i].span
        if kinds[i] is not None:
            continue
        best = None
        if span is not None:
            for j, ann in enumerate(annotations):
                ov = span.overlap(ann.span)
                if ov and (best is None or (ov, -ann.span.start) > (best[0], -annotations[best[1]].span.start)):
                    best = (ov, j)
        if best is None:
            kinds[i] = MatchKind.OVER
        else:
            kinds[i], bindings[i] = MatchKind.RELAXED, best[1]

    return MatchResult(tuple(kinds), tuple(bindings), len(annotations))


def count_label_hits(
    match: MatchResult, detections: Sequence[Detection], annotations: Sequence[Annotation]
) -> tuple[int, int, int, int]:
    """Return (T_E, T_R, Y_E, Y_R): correct statuses and systems per match kind."""
    t_e = t_r = y_e = y_r = 0
    for det, kind, j in zip(detections, match.kinds, match.bindings):
        if j is None:
            continue
        ann = annotations[j]
        status_ok = det.status == ann.status
        system_ok = det.system is not None and det.system == ann.system
        if kind is MatchKind.EXACT:
            t_e += status_ok
            y_e += system_ok
        else:
            t_r += status_ok
            y_r += system_ok
    return t_e, t_r, y_e, y_r


@dataclass(frozen=True)
class MetricCounts:
    """The eight raw counters of one (model, corpus) evaluation."""

    E: int = 0
    R: int = 0
    U: int = 0
    O: int = 0  # noqa: E741
    T_E: int = 0
    T_R: int = 0
    Y_E: int = 0
    Y_R: int = 0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{f.name} must be a non-negative integer, got {v!r}")
        if self.T_E > self.E or self.Y_E > self.E:
            raise ValueError("T_E and Y_E cannot exceed E")
        if self.T_R > self.R or self.Y_R > self.R:
            raise ValueError("T_R and Y_R cannot exceed R")

    def __add__(self, other: MetricCounts) -> MetricCounts:
        return MetricCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def to_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> MetricCounts:
        return cls(**{f.name: d[f.name] for f in fields(cls)})


def span_errors(c: MetricCounts) -> int:
    return c.R + c.U + c.O


def label_errors(c: MetricCounts) -> int:
    # under/over detections contribute two wrong labels each; matched ones
    # contribute whichever of status/system is wrong
    return 2 * (c.E + c.R + c.U + c.O) - (c.T_E + c.T_R + c.Y_E + c.Y_R)


def accuracies(c: MetricCounts) -> tuple[float, float]:
    """(status accuracy, system accuracy) over exact and relaxed matches."""
    matched = c.E + c.R
    if matched == 0:
        raise DivisionUndefined("accuracy undefined: no exact or relaxed matches")
    return (c.T_E + c.T_R) / matched, (c.Y_E + c.Y_R) / matched


def percent(numerator: int, denominator: int) -> Fraction:
    return Fraction(100 * numerator, denominator)


def round_half_up(value: Fraction, places: int = 1) -> Fraction:
    scale = 10**places
    return Fraction(math.floor(value * scale + Fraction(1, 2)), scale)


def format_percent(value: Fraction | float, places: int = 1) -> str:
    rounded = round_half_up(Fraction(value), places)
    return f"{float(rounded):.{places}f}%"


@dataclass(frozen=True)
class NoteScore:
    counts: MetricCounts
    covered_relaxed: int = 0
    n_annotations: int = 0

    def to_dict(self) -> dict:
        return {**self.counts.to_dict(), "covered_relaxed": self.covered_relaxed, "annotations": self.n_annotations}


def score_note(detections: Sequence[Detection], annotations: Sequence[Annotation]) -> NoteScore:
    match = match_detections(detections, annotations)
    t_e, t_r, y_e, y_r = count_label_hits(match, detections, annotations)
    counts = MetricCounts(
        E=match.count(MatchKind.EXACT),
        R=match.count(MatchKind.RELAXED),
        U=match.under,
        O=match.count(MatchKind.OVER),
        T_E=t_e,
        T_R=t_r,
        Y_E=y_e,
        Y_R=y_r,
    )
    return NoteScore(counts, match.covered_relaxed, len(annotations))


@dataclass(frozen=True)
class EvaluationReport:
    """Counters for one model plus everything derived from them.

    Derived values are properties so they can never drift from the counts.
    """

    model: str
    counts: MetricCounts
    total_spans: int
    per_note: dict[str, NoteScore] = field(default_factory=dict)

    @property
    def total_labels(self) -> int:
        return 2 * self.total_spans

    @property
    def span_errors(self) -> int:
        return span_errors(self.counts)

    @property
    def label_errors(self) -> int:
        return label_errors(self.counts)

    @property
    def span_error_rate(self) -> Fraction | None:
        return percent(self.span_errors, self.total_spans) if self.total_spans else None

    @property
    def label_error_rate(self) -> Fraction | None:
        return percent(self.label_errors, self.total_labels) if self.total_spans else None

    @property
    def status_accuracy(self) -> float | None:
        try:
            return accuracies(self.counts)[0]
        except DivisionUndefined:
            return None

    @property
    def system_accuracy(self) -> float | None:
        try:
            return accuracies(self.counts)[1]
        except DivisionUndefined:
            return None

    def __add__(self, other: EvaluationReport) -> EvaluationReport:
        overlap = self.per_note.keys() & other.per_note.keys()
        if overlap:
            raise ValueError(f"reports share notes: {sorted(overlap)}")
        return EvaluationReport(
            self.model,
            self.counts + other.counts,
            self.total_spans + other.total_spans,
            {**self.per_note, **other.per_note},
        )

    def to_dict(self) -> dict:
        def pct(v):
            return None if v is None else float(round_half_up(v))

        def acc(v):
            return None if v is None else round(100 * v, 4)

        return {
            "model": self.model,
            "counts": self.counts.to_dict(),
            "total_spans": self.total_spans,
            "total_labels": self.total_labels,
            "span_errors": self.span_errors,
            "span_error_rate": pct(self.span_error_rate),
            "label_errors": self.label_errors,
            "label_error_rate": pct(self.label_error_rate),
            "status_accuracy": acc(self.status_accuracy),
            "system_accuracy": acc(self.system_accuracy),
            "per_note": {k: v.to_dict() for k, v in sorted(self.per_note.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> EvaluationReport:
        if not isinstance(d, dict):
            raise TypeError(f"report must be a JSON object, got {type(d).__name__}")
        per_note = {}
        for note_id, row in d.get("per_note", {}).items():
            per_note[note_id] = NoteScore(
                MetricCounts.from_dict(row), row.get("covered_relaxed", 0), row.get("annotations", 0)
            )
        return cls(d.get("model", ""), MetricCounts.from_dict(d["counts"]), int(d["total_spans"]), per_note)


def evaluate_corpus(outputs: Iterable, corpus: Corpus, model: str = "") -> EvaluationReport:
    """Score pipeline outputs against a gold corpus.

    Notes with no output record, or whose ROS section was not found, score
    every annotation as an under-detection.
    """
    known = {n.note_id for n in corpus.notes}
    detections: dict[str, tuple[Detection, ...]] = {}
    for out in outputs:
        if out.note_id not in known:
            raise KeyError(f"unknown note_id {out.note_id!r}")
        if out.note_id in detections:
            raise ValueError(f"duplicate output for note_id {out.note_id!r}")
        detections[out.note_id] = tuple(out.detections)

    total = MetricCounts()
    per_note = {}
    for note in corpus.notes:
        score = score_note(detections.get(note.note_id, ()), corpus.annotations_for(note.note_id))
        per_note[note.note_id] = score
        total = total + score.counts
    return EvaluationReport(model, total, corpus.total_annotations, per_note)


def reports_from_counts(path: str | Path) -> list[EvaluationReport]:
    """Load bare counters: one object or a list of objects.

    Each object needs the eight counters plus ``total_spans``; ``model`` is
    optional.
    """
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    rows = data if isinstance(data, list) else [data]
    reports = []
    for row in rows:
        if not isinstance(row, dict):
            raise ValueError(f"{path}: counts record must be a JSON object")
        try:
            reports.append(EvaluationReport(str(row.get("model", "")), MetricCounts.from_dict(row), int(row["total_spans"])))
        except KeyError as e:
            raise ValueError(f"{path}: counts record missing {e.args[0]!r}") from None
    return reports


def render_table(reports: Sequence[EvaluationReport]) -> str:
    """Markdown table with one column per model, rows as in the published layout."""
    names = [r.model or f"model {i + 1}" for i, r in enumerate(reports)]
    header = "| | | " + " | ".join(names) + " |"
    sep = "|---|---|" + "---:|" * len(reports)
    rows = [header, sep]

    def row(group: str, label: str, values: Iterable[str]) -> None:
        rows.append(f"| {group} | {label} | " + " | ".join(values) + " |")

    for group, keys in (("Entity Spans", "E R U O"), ("Status Labels", "T_E T_R"), ("System Labels", "Y_E Y_R")):
        for i, key in enumerate(keys.split()):
            row(group if i == 0 else "", key, (str(getattr(r.counts, key)) for r in reports))

    def with_rate(n: int, rate: Fraction | None) -> str:
        return f"{n} ({format_percent(rate)})" if rate is not None else f"{n} (n/a)"

    def acc(v: float | None) -> str:
        return "n/a" if v is None else format_percent(Fraction(v) * 100)

    row("Span Errors (Rate)", "", (with_rate(r.span_errors, r.span_error_rate) for r in reports))
    row("Label Errors (Rate)", "", (with_rate(r.label_errors, r.label_error_rate) for r in reports))
    row("Status Accuracy", "", (acc(r.status_accuracy) for r in reports))
    row("System Accuracy", "", (acc(r.system_accuracy) for r in reports))
    return "\n".join(rows) + "\n"
