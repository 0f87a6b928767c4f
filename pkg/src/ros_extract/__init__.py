"""Review of Systems entity extraction from clinical notes, and its scorer."""

__version__ = "0.1.0"

from .backend import ChatRequest, GenerationConfig, HttpBackend, RecordingBackend, ReplayBackend
from .domain import Annotation, BodySystem, ClinicalNote, Corpus, Detection, Span, Status, canonicalize_system, load_corpus
from .evaluation import EvaluationReport, MetricCounts, evaluate_corpus, match_detections
from .pipeline import PipelineOutput, run_corpus, run_note
from .segmenter import HeaderLexicon, segment_ros

__all__ = [
    "Annotation",
    "BodySystem",
    "ChatRequest",
    "ClinicalNote",
    "Corpus",
    "Detection",
    "EvaluationReport",
    "GenerationConfig",
    "HeaderLexicon",
    "HttpBackend",
    "MetricCounts",
    "PipelineOutput",
    "RecordingBackend",
    "ReplayBackend",
    "Span",
    "Status",
    "canonicalize_system",
    "evaluate_corpus",
    "load_corpus",
    "match_detections",
    "run_corpus",
    "run_note",
    "segment_ros",
]
