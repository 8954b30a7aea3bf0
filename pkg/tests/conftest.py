from __future__ import annotations

import json
from pathlib import Path

import pytest

from notecheck.provider import (
    MockChatBackend,
    MockEmbeddingBackend,
    Provider,
    ResponseCache,
)

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "notecheck" / "fixtures"

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def make_provider(
    rules=(),
    default="Yes",
    overrides=None,
    dim=8,
    cache_path=None,
    retries=3,
):
    """Provider over scripted mock backends, no retry delay."""
    chat = MockChatBackend(rules=rules, default=default)
    embed = MockEmbeddingBackend(dim=dim, seed=0, overrides=overrides)
    provider = Provider(
        chat,
        embed,
        ResponseCache(cache_path),
        retries=retries,
        retry_base_delay=0.0,
    )
    return provider, chat, embed


def write_jsonl(path: Path, records) -> Path:
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


@pytest.fixture
def feedback_file(tmp_path):
    def _write(records, name="feedback.jsonl"):
        return write_jsonl(tmp_path / name, records)

    return _write


# -- acceptance reporting: one pass/fail line per criterion --


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE_RESULTS.append((name, report.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{outcome:6}  {name}")
