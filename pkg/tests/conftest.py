"""Shared fixtures plus the acceptance summary printed after each run."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import synth  # noqa: E402

from trieval.corpus import Corpus, load_corpus  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, label): end-to-end acceptance check, one summary line per criterion",
    )
    config._acceptance_map = {}
    config._acceptance_outcomes = {}


def pytest_collection_modifyitems(config, items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker:
            config._acceptance_map[item.nodeid] = (marker.args[0], marker.args[1])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    store = item.config._acceptance_outcomes
    if report.when == "setup" and report.outcome != "passed":
        store[item.nodeid] = "failed"
    elif report.when == "call":
        current = store.get(item.nodeid)
        if current != "failed":
            store[item.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mapping = getattr(config, "_acceptance_map", {})
    if not mapping:
        return
    outcomes = getattr(config, "_acceptance_outcomes", {})
    terminalreporter.section("acceptance criteria")
    for nodeid, (num, label) in sorted(mapping.items(), key=lambda kv: kv[1][0]):
        outcome = outcomes.get(nodeid, "not run")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(
            outcome, outcome.upper()
        )
        terminalreporter.write_line(f"criterion {num:>2}: {status}  {label}")


# --- shared fixtures ---------------------------------------------------------


@pytest.fixture(scope="session")
def small_docs():
    """60 documents over 4 topics; enough structure for most unit tests."""
    return synth.make_corpus(n_docs=60, n_topics=4, seed=101, body_len=(30, 50))


@pytest.fixture(scope="session")
def small_corpus(small_docs, tmp_path_factory) -> Corpus:
    path = tmp_path_factory.mktemp("corpus") / "corpus.jsonl"
    synth.write_corpus(path, small_docs)
    return load_corpus(path)


def write_corpus_file(tmp_path: Path, records: list[dict]) -> Path:
    path = tmp_path / "corpus.jsonl"
    path.write_text(
        "\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8"
    )
    return path


@pytest.fixture
def corpus_file_writer(tmp_path):
    def write(records: list[dict]) -> Path:
        return write_corpus_file(tmp_path, records)

    return write
