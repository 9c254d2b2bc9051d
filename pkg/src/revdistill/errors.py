"""Exception hierarchy shared across the toolkit.

Precondition violations (bad arguments a caller controls) raise plain
``ValueError``; the classes below mark failures that depend on external
data or services and that operators are expected to handle individually.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit-specific failures."""


class CorpusFormatError(ToolkitError):
    """A corpus or annotation file violates the documented record format."""

    def __init__(self, message: str, *, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += path
        if line is not None:
            prefix += f":{line}"
        super().__init__(f"{prefix}: {message}" if prefix else message)


class UnscorableEntryError(ToolkitError):
    """The entry lacks a recorded code fix, so the differential score is undefined."""


class TransportError(ToolkitError):
    """A backend was unreachable after exhausting the configured attempts."""


class ProtocolError(ToolkitError):
    """A backend answered, but the response violates the wire contract."""


class ContextOverflowError(ToolkitError):
    """Prompt plus completion exceed the backend's context limit."""

    def __init__(self, message: str, *, prompt_tokens: int, completion_tokens: int, limit: int):
        self.prompt_tokens = prompt_tokens
        self.completion_tokens = completion_tokens
        self.limit = limit
        super().__init__(
            f"{message} (prompt={prompt_tokens} + completion={completion_tokens} tokens, limit={limit})"
        )


class JudgeParseError(ToolkitError):
    """A judge backend produced output outside the True/False contract."""


class ConfigError(ToolkitError):
    """The run configuration file is missing, unreadable, or inconsistent."""
