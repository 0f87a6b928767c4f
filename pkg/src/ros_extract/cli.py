"""Command line entry point: ``ros-extract segment|run|eval|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .backend import GenerationConfig, HttpBackend, ReplayBackend, RecordingBackend, TransportError
from .domain import CorpusError, load_corpus, load_notes
from .evaluation import EvaluationReport, evaluate_corpus, render_table, reports_from_counts
from .pipeline import NER_INSTRUCTION, prompt_checksums, read_outputs, run_corpus, sha256_text, write_outputs
from .segmenter import DEFAULT_LEXICON, HeaderLexicon, segment_ros

log = logging.getLogger("ros_extract")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3
EXIT_STAGE_ERRORS = 4

BACKENDS = ("http", "replay", "record")


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    backend: str = "replay"
    base_url: str | None = None
    model: str = ""
    store: str | None = None
    lexicon: str | None = None
    workers: int = 4
    notes: str | None = None
    annotations: str | None = None
    out: str | None = None
    generation: GenerationConfig = field(default_factory=GenerationConfig)

    _GENERATION_KEYS = ("temperature", "seed", "top_k", "top_p", "timeout", "max_retries")

    @classmethod
    def build(cls, file_values: dict, overrides: dict) -> RunConfig:
        """Merge a flat JSON config with command-line overrides (flags win)."""
        merged = {k: v for k, v in file_values.items()}
        merged.update({k: v for k, v in overrides.items() if v is not None})
        known = {f.name for f in fields(cls)} | set(cls._GENERATION_KEYS)
        unknown = set(merged) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        gen = {k: merged.pop(k) for k in cls._GENERATION_KEYS if k in merged}
        try:
            generation = GenerationConfig(model=merged.get("model", ""), **gen)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        merged.pop("generation", None)
        cfg = cls(**merged, generation=generation)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend in ("http", "record") and not self.base_url:
            raise ConfigError(f"backend {self.backend!r} requires base_url")
        if self.backend in ("replay", "record") and not self.store:
            raise ConfigError(f"backend {self.backend!r} requires a store path")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be an integer >= 1")
        if not self.notes:
            raise ConfigError("notes directory is required")
        if not self.out:
            raise ConfigError("output path is required")

    def snapshot(self) -> dict:
        return {
            "backend": self.backend,
            "base_url": self.base_url,
            "model": self.model,
            "store": self.store,
            "lexicon": self.lexicon,
            "workers": self.workers,
            "notes": self.notes,
            "out": self.out,
            "generation": self.generation.to_dict(),
        }


def _load_lexicon(path: str | None) -> tuple[HeaderLexicon, str]:
    if path:
        text = Path(path).read_text(encoding="utf-8")
        return HeaderLexicon.parse(text), sha256_text(text)
    from importlib import resources

    text = (resources.files("ros_extract") / "resources" / DEFAULT_LEXICON).read_text("utf-8")
    return HeaderLexicon.parse(text), sha256_text(text)


def cmd_segment(args: argparse.Namespace) -> int:
    try:
        notes = load_notes(args.notes)
        lexicon, _ = _load_lexicon(args.lexicon)
    except (CorpusError, OSError, UnicodeDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    print("note_id\tros\tstart\tend")
    for note in notes:
        seg = segment_ros(note, lexicon)
        if seg is None:
            print(f"{note.note_id}\tnot-found\t-\t-")
        else:
            print(f"{note.note_id}\tfound\t{seg.body_span.start}\t{seg.body_span.end}")
    return EXIT_OK


def _make_backend(cfg: RunConfig):
    if cfg.backend == "replay":
        return ReplayBackend.from_file(cfg.store)
    http = HttpBackend(cfg.base_url)
    http.ping()
    if cfg.backend == "record":
        return RecordingBackend(http, cfg.store)
    return http


def cmd_run(args: argparse.Namespace) -> int:
    try:
        file_values = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = RunConfig.build(
            file_values,
            {
                "backend": args.backend,
                "base_url": args.base_url,
                "model": args.model,
                "store": args.store,
                "lexicon": args.lexicon,
                "workers": args.workers,
                "notes": args.notes,
                "out": args.out,
            },
        )
    except (ConfigError, OSError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        notes = load_notes(cfg.notes)
        lexicon, lexicon_sha = _load_lexicon(cfg.lexicon)
    except (CorpusError, OSError, UnicodeDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA

    try:
        backend = _make_backend(cfg)
    except TransportError as e:
        print(f"backend unavailable: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA

    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    try:
        outputs = run_corpus(notes, backend, cfg.generation, lexicon, workers=cfg.workers)
    finally:
        close = getattr(backend, "close", None)
        if close:
            close()
    elapsed = time.perf_counter() - t0

    out = Path(cfg.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_outputs(outputs, out)
    except OSError as e:
        print(f"error: cannot write outputs: {e}", file=sys.stderr)
        return EXIT_DATA

    errors = [e for o in outputs for e in o.stage_errors]
    manifest = {
        "tool": "ros-extract",
        "version": __version__,
        "config": cfg.snapshot(),
        "lexicon_sha256": lexicon_sha,
        "prompts": prompt_checksums(),
        "ner_instruction": NER_INSTRUCTION,
        "notes": len(notes),
        "ros_found": sum(o.ros_found for o in outputs),
        "detections": sum(len(o.detections) for o in outputs),
        "discarded": sum(len(o.discarded) for o in outputs),
        "stage_errors": len(errors),
        "outputs_sha256": sha256_text(out.read_text(encoding="utf-8")),
        "started_at": started.isoformat(timespec="seconds"),
        "elapsed_seconds": round(elapsed, 3),
    }
    manifest_path = out.with_name(out.stem + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    print(f"processed {len(notes)} notes -> {out} ({len(errors)} stage errors)", file=sys.stderr)
    if any(e.kind == TransportError.kind for e in errors):
        return EXIT_BACKEND
    return EXIT_STAGE_ERRORS if errors else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        if args.counts:
            reports = [r for path in args.counts for r in reports_from_counts(path)]
        else:
            if not (args.outputs and args.notes and args.annotations):
                print("error: eval needs --outputs, --notes and --annotations (or --counts)", file=sys.stderr)
                return EXIT_USAGE
            corpus = load_corpus(args.notes, args.annotations)
            outputs = read_outputs(args.outputs)
            model = args.model or Path(args.outputs).stem
            reports = [evaluate_corpus(outputs, corpus, model=model)]
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return EXIT_DATA
    except (CorpusError, OSError, ValueError, UnicodeDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA

    sys.stdout.write(render_table(reports))
    if args.out:
        data = [r.to_dict() for r in reports]
        Path(args.out).write_text(json.dumps(data[0] if len(data) == 1 else data, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        data = json.loads(Path(args.report).read_text(encoding="utf-8"))
        rows = data if isinstance(data, list) else [data]
        reports = [EvaluationReport.from_dict(r) for r in rows]
    except (OSError, ValueError, KeyError, TypeError) as e:
        print(f"error: cannot read report: {e}", file=sys.stderr)
        return EXIT_DATA
    sys.stdout.write(render_table(reports))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ros-extract", description="Review of Systems entity extraction and scoring.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("segment", help="report the ROS section span of every note")
    p.add_argument("--notes", required=True)
    p.add_argument("--lexicon")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("run", help="run the extraction pipeline over a notes directory")
    p.add_argument("--config")
    p.add_argument("--notes")
    p.add_argument("--out")
    p.add_argument("--backend", choices=BACKENDS)
    p.add_argument("--base-url")
    p.add_argument("--model")
    p.add_argument("--store")
    p.add_argument("--lexicon")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score pipeline outputs against gold annotations")
    p.add_argument("--outputs")
    p.add_argument("--notes")
    p.add_argument("--annotations")
    p.add_argument("--counts", action="append", help="bare counters JSON; repeatable")
    p.add_argument("--model")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render a saved JSON report as a table")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
