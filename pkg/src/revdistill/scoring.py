"""Perplexity of code fixes and the comment-desiredness differential.

A review comment is scored by how much it lowers the perplexity of the
recorded fix: the fix is scored once conditioned on a refine prompt that
includes the comment and once on the same prompt without it, and the score
is the (negated) perplexity difference. Positive means the comment made the
fix more predictable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from . import backends
from .backends import BackendConfig, ScoredCompletion
from .corpus import ReviewEntry, truncate_tokens_left
from .errors import CorpusFormatError, UnscorableEntryError
from .util import dump_record, iter_jsonl

REFINE_PROMPT_WITH_COMMENT = (
    "Refine the given code based on the provided code review comment.\n"
    "The comment is: '{comment}'\n"
    "The code is: '{code}'"
)

REFINE_PROMPT_WITHOUT_COMMENT = (
    "Refine the given code based on the provided code review comment.\n"
    "The code is: '{code}'"
)

DEFAULT_TRUNCATION_LIMIT = 2048

SCORE_FIELDS = ("entry_id", "backend_id", "ppl_with", "ppl_without", "ds")


@dataclass(frozen=True)
class PerplexityResult:
    ppl: float
    token_count: int
    logprob_sum: float


@dataclass(frozen=True)
class DesirednessScore:
    """Per-entry, per-backend differential; prompt_truncated is run metadata only."""

    entry_id: str
    backend_id: str
    ppl_with: float
    ppl_without: float
    ds: float
    prompt_truncated: bool = False

    def to_record(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "backend_id": self.backend_id,
            "ppl_with": self.ppl_with,
            "ppl_without": self.ppl_without,
            "ds": self.ds,
        }


def render_refine_prompt(code: str, comment: str | None = None) -> str:
    """Fill the refine template; without a comment the comment line is omitted entirely."""
    if not code.strip():
        raise ValueError("code must be non-empty")
    if comment is None:
        return REFINE_PROMPT_WITHOUT_COMMENT.format(code=code)
    return REFINE_PROMPT_WITH_COMMENT.format(comment=comment, code=code)


def perplexity(scored: ScoredCompletion) -> PerplexityResult:
    """exp(-mean completion-token logprob), over completion tokens only."""
    count = scored.token_count
    total = scored.logprob_sum
    return PerplexityResult(ppl=math.exp(-total / count), token_count=count, logprob_sum=total)


def _truncated_prompt(prompt: str, completion: str, limit: int, cfg: BackendConfig) -> tuple[str, bool]:
    """Fit prompt+completion into ``limit`` tokens by cutting the prompt from the left.

    The completion is never cut: the differential needs the identical
    completion under both conditions. If the completion alone fills the
    budget the prompt collapses to empty.
    """
    counter = backends.token_counter_for(cfg)
    budget = max(0, limit - counter.count(completion))
    return truncate_tokens_left(prompt, budget, counter)


def desiredness(
    entry: ReviewEntry,
    cfg: BackendConfig,
    *,
    truncation_limit: int = DEFAULT_TRUNCATION_LIMIT,
) -> DesirednessScore:
    """Score one entry on one backend; requires a recorded fix.

    Both perplexities are computed over the identical fix text; only the
    conditioning prompt differs.
    """
    if truncation_limit <= 0:
        raise ValueError("truncation_limit must be positive")
    if not entry.scorable:
        raise UnscorableEntryError(f"entry {entry.entry_id!r} has no recorded code fix")
    completion = entry.new_hunk
    assert completion is not None
    prompt_with, cut_with = _truncated_prompt(
        render_refine_prompt(entry.old_hunk, entry.comment), completion, truncation_limit, cfg
    )
    prompt_without, cut_without = _truncated_prompt(
        render_refine_prompt(entry.old_hunk), completion, truncation_limit, cfg
    )
    ppl_with = perplexity(backends.score_completion(cfg, prompt_with, completion)).ppl
    ppl_without = perplexity(backends.score_completion(cfg, prompt_without, completion)).ppl
    return DesirednessScore(
        entry_id=entry.entry_id,
        backend_id=cfg.backend_id,
        ppl_with=ppl_with,
        ppl_without=ppl_without,
        ds=-(ppl_with - ppl_without),
        prompt_truncated=cut_with or cut_without,
    )


def score_line(score: DesirednessScore) -> str:
    return dump_record(score.to_record())


def write_scores(path: str | Path, scores: Iterable[DesirednessScore]) -> int:
    count = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as stream:
        for score in scores:
            stream.write(score_line(score) + "\n")
            count += 1
    return count


def read_scores(path: str | Path) -> list[DesirednessScore]:
    """Load a score file written by write_scores (or a resumed run)."""
    scores: list[DesirednessScore] = []
    for lineno, record in iter_jsonl(path):
        if set(record) != set(SCORE_FIELDS):
            raise CorpusFormatError(
                f"expected fields {list(SCORE_FIELDS)}, got {sorted(record)}",
                line=lineno,
                path=str(path),
            )
        try:
            scores.append(
                DesirednessScore(
                    entry_id=record["entry_id"],
                    backend_id=record["backend_id"],
                    ppl_with=float(record["ppl_with"]),
                    ppl_without=float(record["ppl_without"]),
                    ds=float(record["ds"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise CorpusFormatError(f"bad score record: {exc}", line=lineno, path=str(path)) from exc
    return scores
