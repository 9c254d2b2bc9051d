"""Small shared helpers: line-delimited JSON IO and half-up rounding."""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator, Mapping
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any

from .errors import CorpusFormatError


def dump_record(record: Mapping[str, Any]) -> str:
    """Serialize one record in canonical form: given key order, compact, UTF-8."""
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (line_number, record) for each non-blank line of a JSONL file.

    Blank lines are skipped so trailing newlines are harmless. Invalid UTF-8
    and malformed JSON raise CorpusFormatError carrying the line number.
    """
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusFormatError(f"invalid UTF-8: {exc}", path=str(path)) from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"malformed record: {exc.msg}", line=lineno, path=str(path)) from exc
        if not isinstance(record, dict):
            raise CorpusFormatError("record is not an object", line=lineno, path=str(path))
        yield lineno, record


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> int:
    """Write records one per line; returns the number written."""
    count = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as stream:
        for record in records:
            stream.write(dump_record(record))
            stream.write("\n")
            count += 1
    return count


def round_half_up(value: float, places: int = 2) -> float:
    """Round with ties away from zero (the reporting convention for percentages)."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def percentage(part: int, whole: int) -> float:
    """part/whole as a percentage, half-up rounded to two decimals. whole > 0."""
    if whole <= 0:
        raise ValueError("percentage requires a positive denominator")
    quotient = Decimal(part) * 100 / Decimal(whole)
    return float(quotient.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))
