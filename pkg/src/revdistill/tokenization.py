"""Token counters used for truncation budgets.

Backends count tokens their own way; truncation only needs a counter that
can also cut a text to a prefix or suffix of at most ``limit`` tokens.
"""

from __future__ import annotations

import re
from typing import Protocol


class TokenCounter(Protocol):
    def count(self, text: str) -> int: ...

    def head(self, text: str, limit: int) -> str: ...

    def tail(self, text: str, limit: int) -> str: ...


class ByteTokenCounter:
    """One token per UTF-8 byte; cuts never split a multi-byte character."""

    def count(self, text: str) -> int:
        return len(text.encode("utf-8"))

    def head(self, text: str, limit: int) -> str:
        data = text.encode("utf-8")
        if len(data) <= limit:
            return text
        # decode(ignore) drops the trailing partial character, if any
        return data[:limit].decode("utf-8", errors="ignore")

    def tail(self, text: str, limit: int) -> str:
        data = text.encode("utf-8")
        if len(data) <= limit:
            return text
        return data[len(data) - limit :].decode("utf-8", errors="ignore")


class WhitespaceTokenCounter:
    """Whitespace-delimited words; a rough stand-in for subword tokenizers."""

    _words = re.compile(r"\S+")

    def count(self, text: str) -> int:
        return len(self._words.findall(text))

    def head(self, text: str, limit: int) -> str:
        matches = list(self._words.finditer(text))
        if len(matches) <= limit:
            return text
        return text[: matches[limit - 1].end()] if limit > 0 else ""

    def tail(self, text: str, limit: int) -> str:
        matches = list(self._words.finditer(text))
        if len(matches) <= limit:
            return text
        return text[matches[len(matches) - limit].start() :] if limit > 0 else ""


_COUNTERS: dict[str, TokenCounter] = {
    "byte": ByteTokenCounter(),
    "whitespace": WhitespaceTokenCounter(),
}


def get_counter(name: str) -> TokenCounter:
    """Look up a registered token counter ("byte" or "whitespace")."""
    try:
        return _COUNTERS[name]
    except KeyError:
        raise ValueError(f"unknown token counter {name!r}; expected one of {sorted(_COUNTERS)}") from None
