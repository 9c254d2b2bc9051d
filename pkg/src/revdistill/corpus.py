"""Corpus ingestion, validation, and canonical serialization.

A corpus file is line-delimited JSON, one record per line, with exactly the
fields {entry_id, language, old_hunk, comment, new_hunk, human_label};
new_hunk and human_label may be null. Annotation files carry
{entry_id, label} with label in {"desired", "undesired"}.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator

from .errors import CorpusFormatError
from .tokenization import TokenCounter
from .util import dump_record, iter_jsonl


class Label(str, Enum):
    DESIRED = "desired"
    UNDESIRED = "undesired"


class SplitTag(str, Enum):
    TRAIN = "train"
    TEST = "test"
    OTHER = "other"


CORPUS_FIELDS = ("entry_id", "language", "old_hunk", "comment", "new_hunk", "human_label")
ANNOTATION_FIELDS = ("entry_id", "label")


@dataclass(frozen=True)
class ReviewEntry:
    """One review event: the hunk under review, the comment, and the fix (if any)."""

    entry_id: str
    language: str
    old_hunk: str
    comment: str
    new_hunk: str | None = None
    human_label: Label | None = None

    def __post_init__(self) -> None:
        if not self.entry_id:
            raise ValueError("entry_id must be non-empty")
        if not self.old_hunk.strip():
            raise ValueError(f"entry {self.entry_id!r}: old_hunk is empty")
        if not self.comment.strip():
            raise ValueError(f"entry {self.entry_id!r}: comment is empty")

    @property
    def scorable(self) -> bool:
        """True when a non-empty fix was recorded; only such entries can be scored."""
        return self.new_hunk is not None and bool(self.new_hunk.strip())

    def to_record(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "language": self.language,
            "old_hunk": self.old_hunk,
            "comment": self.comment,
            "new_hunk": self.new_hunk,
            "human_label": self.human_label.value if self.human_label else None,
        }


@dataclass(frozen=True)
class Corpus:
    """Immutable, ordered collection of entries; iteration follows file order."""

    entries: tuple[ReviewEntry, ...]
    source_path: str
    split_tag: SplitTag

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.entry_id in seen:
                raise ValueError(f"duplicate entry_id {entry.entry_id!r}")
            seen.add(entry.entry_id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[ReviewEntry]:
        return iter(self.entries)

    def with_labels(self, labels: dict[str, Label]) -> "Corpus":
        """Return a copy with human labels attached where the map provides them."""
        updated = tuple(
            replace(e, human_label=labels[e.entry_id]) if e.entry_id in labels else e
            for e in self.entries
        )
        return Corpus(entries=updated, source_path=self.source_path, split_tag=self.split_tag)


def _parse_entry(record: dict, *, path: str, lineno: int) -> ReviewEntry:
    keys = set(record)
    expected = set(CORPUS_FIELDS)
    if keys != expected:
        missing = sorted(expected - keys)
        extra = sorted(keys - expected)
        parts = []
        if missing:
            parts.append(f"missing fields {missing}")
        if extra:
            parts.append(f"unexpected fields {extra}")
        raise CorpusFormatError("; ".join(parts), line=lineno, path=path)
    for field in ("entry_id", "language", "old_hunk", "comment"):
        if not isinstance(record[field], str):
            raise CorpusFormatError(f"field {field!r} must be a string", line=lineno, path=path)
    if record["new_hunk"] is not None and not isinstance(record["new_hunk"], str):
        raise CorpusFormatError("field 'new_hunk' must be a string or null", line=lineno, path=path)
    raw_label = record["human_label"]
    label: Label | None
    if raw_label is None:
        label = None
    else:
        try:
            label = Label(raw_label)
        except ValueError:
            raise CorpusFormatError(
                f"human_label must be 'desired' or 'undesired', got {raw_label!r}",
                line=lineno,
                path=path,
            ) from None
    try:
        return ReviewEntry(
            entry_id=record["entry_id"],
            language=record["language"],
            old_hunk=record["old_hunk"],
            comment=record["comment"],
            new_hunk=record["new_hunk"],
            human_label=label,
        )
    except ValueError as exc:
        raise CorpusFormatError(str(exc), line=lineno, path=path) from exc


def load_corpus(path: str | Path, split_tag: SplitTag | str = SplitTag.OTHER) -> Corpus:
    """Load a corpus file, preserving file order.

    Raises CorpusFormatError for malformed lines (with line number), duplicate
    entry ids (naming the id), invalid UTF-8, and empty files.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError("file not found", path=str(path))
    tag = SplitTag(split_tag)
    entries: list[ReviewEntry] = []
    seen: dict[str, int] = {}
    for lineno, record in iter_jsonl(path):
        entry = _parse_entry(record, path=str(path), lineno=lineno)
        if entry.entry_id in seen:
            raise CorpusFormatError(
                f"duplicate entry_id {entry.entry_id!r} (first seen on line {seen[entry.entry_id]})",
                line=lineno,
                path=str(path),
            )
        seen[entry.entry_id] = lineno
        entries.append(entry)
    if not entries:
        raise CorpusFormatError("file contains no records", path=str(path))
    return Corpus(entries=tuple(entries), source_path=str(path), split_tag=tag)


def serialize_corpus(corpus: Corpus) -> str:
    """Canonical byte form: documented field order, compact JSON, one entry per line."""
    return "".join(dump_record(entry.to_record()) + "\n" for entry in corpus)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(serialize_corpus(corpus), encoding="utf-8", newline="\n")


def load_annotations(path: str | Path) -> dict[str, Label]:
    """Load a manual-annotation file into an entry_id -> label map.

    Unknown label strings and conflicting duplicate labels are errors; exact
    duplicates are tolerated.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusFormatError("file not found", path=str(path))
    labels: dict[str, Label] = {}
    for lineno, record in iter_jsonl(path):
        if set(record) != set(ANNOTATION_FIELDS):
            raise CorpusFormatError(
                f"expected fields {list(ANNOTATION_FIELDS)}, got {sorted(record)}",
                line=lineno,
                path=str(path),
            )
        entry_id = record["entry_id"]
        if not isinstance(entry_id, str) or not entry_id:
            raise CorpusFormatError("entry_id must be a non-empty string", line=lineno, path=str(path))
        try:
            label = Label(record["label"])
        except ValueError:
            raise CorpusFormatError(
                f"label must be 'desired' or 'undesired', got {record['label']!r}",
                line=lineno,
                path=str(path),
            ) from None
        if entry_id in labels and labels[entry_id] is not label:
            raise CorpusFormatError(
                f"conflicting labels for entry_id {entry_id!r}", line=lineno, path=str(path)
            )
        labels[entry_id] = label
    return labels


def truncate_tokens(text: str, limit: int, counter: TokenCounter) -> tuple[str, bool]:
    """Cut text to a prefix of at most ``limit`` tokens; returns (text, was_truncated)."""
    if limit <= 0:
        raise ValueError("limit must be positive")
    if not text:
        return "", False
    if counter.count(text) <= limit:
        return text, False
    return counter.head(text, limit), True


def truncate_tokens_left(text: str, limit: int, counter: TokenCounter) -> tuple[str, bool]:
    """Cut text from the left, keeping the trailing ``limit`` tokens.

    Unlike truncate_tokens, a limit of 0 is allowed (the whole text is
    dropped); scoring uses this when the completion alone fills the budget.
    """
    if limit < 0:
        raise ValueError("limit must be non-negative")
    if not text:
        return "", False
    if limit == 0:
        return "", True
    if counter.count(text) <= limit:
        return text, False
    return counter.tail(text, limit), True
