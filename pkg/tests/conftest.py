from __future__ import annotations

from pathlib import Path

import pytest

from ros_extract.backend import GenerationConfig, ReplayBackend
from ros_extract.domain import load_corpus
from ros_extract.segmenter import HeaderLexicon

FIXTURES = Path(__file__).parent / "fixtures"
NOTES_DIR = FIXTURES / "notes"
ANNOTATIONS = FIXTURES / "annotations.jsonl"
REPLAY_STORE = FIXTURES / "replay_store.jsonl"
GOLDEN_OUTPUTS = FIXTURES / "golden_outputs.jsonl"
GOLDEN_REPORT = FIXTURES / "golden_report.json"


@pytest.fixture(scope="session")
def lexicon() -> HeaderLexicon:
    return HeaderLexicon.default()


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(NOTES_DIR, ANNOTATIONS)


@pytest.fixture
def replay() -> ReplayBackend:
    return ReplayBackend.from_file(REPLAY_STORE)


@pytest.fixture
def config() -> GenerationConfig:
    return GenerationConfig(model="scripted")


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
