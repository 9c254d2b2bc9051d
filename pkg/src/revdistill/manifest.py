"""Run manifests: what ran, on which input bytes, with which effective config."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from . import __version__


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    command: str
    config_digest: str = ""
    input_digests: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__
    started: str = field(default_factory=_utcnow)
    finished: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def add_input(self, path: str | Path) -> None:
        self.input_digests[str(path)] = sha256_file(path)

    def set_config(self, path: str | Path) -> None:
        self.config_digest = sha256_file(path)

    def finish(self) -> None:
        self.finished = _utcnow()

    def write(self, path: str | Path) -> None:
        if not self.finished:
            self.finish()
        record = {
            "command": self.command,
            "config_digest": self.config_digest,
            "input_digests": self.input_digests,
            "tool_version": self.tool_version,
            "started": self.started,
            "finished": self.finished,
            **self.extra,
        }
        Path(path).write_text(
            json.dumps(record, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
