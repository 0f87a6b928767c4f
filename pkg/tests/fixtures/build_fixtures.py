"""Regenerate the fixture corpus artifacts.

    python tests/fixtures/build_fixtures.py

Writes annotations.jsonl (gold), replay_store.jsonl (scripted model run in
record mode), golden_outputs.jsonl and golden_report.json. Gold offsets are
found by searching each surface after the ROS header anchor of its note.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from scripted_model import ScriptedModel  # noqa: E402

from ros_extract.backend import GenerationConfig, RecordingBackend  # noqa: E402
from ros_extract.domain import load_corpus, load_notes  # noqa: E402
from ros_extract.evaluation import evaluate_corpus  # noqa: E402
from ros_extract.pipeline import run_corpus, write_outputs  # noqa: E402
from ros_extract.segmenter import HeaderLexicon  # noqa: E402

# note_id -> (anchor, [(surface, status, system), ...]) in text order
GOLD = {
    "note_001": (
        "REVIEW OF SYSTEMS:",
        [
            ("fevers", "positive", "constitutional"),
            ("fatigue", "positive", "constitutional"),
            ("weight loss", "negative", "constitutional"),
            ("blurry vision", "negative", "eyes"),
            ("cough", "positive", "respiratory"),
            ("shortness of breath", "negative", "respiratory"),
            ("chest pain", "negative", "cardiovascular"),
        ],
    ),
    "note_002": (
        "Review of Systems:",
        [
            ("fever", "positive", "constitutional"),
            ("headache", "negative", "neurological"),
            ("back pain", "negative", "musculoskeletal"),
            ("GI", "negative", "gastrointestinal"),
            ("muscle or joint pain", "positive", "musculoskeletal"),
        ],
    ),
    "note_003": (
        "REVIEW OF SYSTEMS:",
        [
            ("nausea", "negative", "gastrointestinal"),
            ("vomiting", "negative", "gastrointestinal"),
        ],
    ),
    "note_004": (
        "ROS:",
        [
            ("cough", "positive", "respiratory"),
            ("wheezing", "positive", "respiratory"),
            ("rash", "negative", "integumentary"),
            ("depression", "negative", "psychiatric"),
            ("anxiety", "negative", "psychiatric"),
            ("polyuria", "positive", "endocrine"),
            ("Easy bruising", "positive", "hematologic_lymphatic"),
        ],
    ),
    "note_005": (
        "REVIEW OF SYSTEMS:",
        [
            ("dysuria", "negative", "genitourinary"),
            ("seasonal allergies", "positive", "allergic_immunologic"),
        ],
    ),
}


def build_annotations() -> None:
    notes = {n.note_id: n for n in load_notes(HERE / "notes")}
    with open(HERE / "annotations.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for note_id, (anchor, entities) in GOLD.items():
            text = notes[note_id].text
            pos = text.index(anchor) + len(anchor)
            rows = []
            for surface, status, system in entities:
                start = text.index(surface, pos)
                pos = start + len(surface)
                rows.append({"start": start, "end": pos, "surface": surface, "status": status, "system": system})
            f.write(json.dumps({"note_id": note_id, "entities": rows}, ensure_ascii=False) + "\n")


def main() -> None:
    build_annotations()
    corpus = load_corpus(HERE / "notes", HERE / "annotations.jsonl")
    store = HERE / "replay_store.jsonl"
    store.unlink(missing_ok=True)
    backend = RecordingBackend(ScriptedModel(), store)
    try:
        outputs = run_corpus(corpus.notes, backend, GenerationConfig(model="scripted"), HeaderLexicon.default(), workers=1)
    finally:
        backend.close()
    write_outputs(outputs, HERE / "golden_outputs.jsonl")
    report = evaluate_corpus(outputs, corpus, model="scripted")
    (HERE / "golden_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"{corpus.total_annotations} annotations, {sum(len(o.detections) for o in outputs)} detections")


if __name__ == "__main__":
    main()
