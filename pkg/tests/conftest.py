from __future__ import annotations

import json
from pathlib import Path

import pytest

from revdistill.backends import build_reference_backend
from revdistill.corpus import CORPUS_FIELDS

from mockserver import MockCompletionsServer

# Seed prose for reference backends: code-flavored so synthetic fixtures score sanely.
SEED_TEXT = (
    "def update_config(options):\n"
    "    for key, value in options.items():\n"
    "        config[key] = value\n"
    "    return config\n"
    "# review: please validate inputs before use\n"
)


def entry_record(entry_id: str, **overrides) -> dict:
    record = {
        "entry_id": entry_id,
        "language": "python",
        "old_hunk": "x = 1",
        "comment": f"comment for {entry_id}",
        "new_hunk": "x = 2",
        "human_label": None,
    }
    record.update(overrides)
    assert set(record) == set(CORPUS_FIELDS)
    return record


def write_jsonl_file(path: Path, records: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def ref_backend():
    return build_reference_backend(SEED_TEXT, backend_id="ref")


@pytest.fixture
def scripted_server():
    server = MockCompletionsServer(mode="scripted").start()
    yield server
    server.stop()


@pytest.fixture
def echo_server():
    server = MockCompletionsServer(mode="echo").start()
    yield server
    server.stop()
