"""Consensus verdicts and dataset emission.

Per-backend differential scores are reduced to one verdict per entry by
taking the median (even counts average the two middle values); the sign
decides desired vs undesired, with 0 counted as undesired. Desired entries
feed the SFT dataset; every scored entry feeds the KTO dataset with its
verdict as the label.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Corpus, Label, ReviewEntry, truncate_tokens
from .errors import CorpusFormatError
from .scoring import DesirednessScore
from .tokenization import TokenCounter
from .util import dump_record, iter_jsonl, percentage, write_jsonl

REVIEW_PROMPT = (
    "Review the given code and provide a constructive code review comment.\n"
    "The code/(diff hunk) is: '{} '"
)

VERDICT_FIELDS = ("entry_id", "consensus_ds", "verdict", "per_backend_ds")
SFT_FIELDS = ("instruction", "input", "output")
KTO_FIELDS = ("prompt", "completion", "label")


@dataclass(frozen=True)
class DesirednessVerdict:
    entry_id: str
    per_backend_ds: tuple[tuple[str, float], ...]  # (backend_id, ds), sorted by backend_id
    consensus_ds: float
    verdict: Label

    def to_record(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "consensus_ds": self.consensus_ds,
            "verdict": self.verdict.value,
            "per_backend_ds": dict(self.per_backend_ds),
        }


@dataclass(frozen=True)
class SftRecord:
    entry_id: str
    instruction_prompt: str
    target_comment: str
    hunk: str
    truncated: bool

    def to_record(self) -> dict:
        # "instruction" keeps the {} slot so consumers can re-render the prompt
        return {"instruction": REVIEW_PROMPT, "input": self.hunk, "output": self.target_comment}


@dataclass(frozen=True)
class KtoRecord:
    entry_id: str
    prompt: str
    completion: str
    label: Label
    truncated: bool

    def to_record(self) -> dict:
        return {"prompt": self.prompt, "completion": self.completion, "label": self.label.value}


@dataclass(frozen=True)
class CorpusStats:
    total: int
    desired: int
    undesired: int
    desired_pct: float | None
    undesired_pct: float | None
    unscorable: int

    def to_record(self) -> dict:
        return {
            "total": self.total,
            "desired": self.desired,
            "undesired": self.undesired,
            "desired_pct": self.desired_pct,
            "undesired_pct": self.undesired_pct,
            "unscorable": self.unscorable,
        }

    def table(self) -> str:
        def pct(value: float | None) -> str:
            return "n/a" if value is None else f"{value:.2f}%"

        scored = self.desired + self.undesired
        return "\n".join(
            [
                f"{'':12s}{'Count':>10s}{'Share':>10s}",
                f"{'desired':12s}{self.desired:>10d}{pct(self.desired_pct):>10s}",
                f"{'undesired':12s}{self.undesired:>10d}{pct(self.undesired_pct):>10s}",
                f"{'scored':12s}{scored:>10d}{'100.00%' if scored else 'n/a':>10s}",
                f"{'unscorable':12s}{self.unscorable:>10d}{'':>10s}",
                f"{'total':12s}{self.total:>10d}{'':>10s}",
            ]
        )


def render_review_prompt(code: str) -> str:
    """Fill the review-comment generation template with a diff hunk."""
    if not code.strip():
        raise ValueError("code must be non-empty")
    return REVIEW_PROMPT.format(code)


def median_consensus(scores: Sequence[DesirednessScore]) -> DesirednessVerdict:
    """Reduce one entry's per-backend scores to a consensus verdict.

    All scores must carry the same entry_id and distinct backend_ids. The
    verdict is desired iff the median differential is strictly positive.
    """
    if not scores:
        raise ValueError("scores must be non-empty")
    entry_ids = {score.entry_id for score in scores}
    if len(entry_ids) > 1:
        raise ValueError(f"scores mix entry_ids {sorted(entry_ids)}")
    backend_ids = [score.backend_id for score in scores]
    if len(set(backend_ids)) != len(backend_ids):
        raise ValueError(f"duplicate backend scores for entry {scores[0].entry_id!r}")
    consensus = statistics.median(score.ds for score in scores)
    return DesirednessVerdict(
        entry_id=scores[0].entry_id,
        per_backend_ds=tuple(sorted((s.backend_id, s.ds) for s in scores)),
        consensus_ds=consensus,
        verdict=Label.DESIRED if consensus > 0 else Label.UNDESIRED,
    )


def build_verdicts(
    scores: Iterable[DesirednessScore],
    expected_backends: Iterable[str] | None = None,
) -> tuple[dict[str, DesirednessVerdict], list[str]]:
    """Group scores by entry and form consensus verdicts.

    Entries whose backend coverage differs from the expected set (by default
    the union observed in the score stream) get no verdict and are returned
    as incomplete: a missing backend means one vote errored, and a partial
    vote must not masquerade as a consensus.
    """
    grouped: dict[str, list[DesirednessScore]] = {}
    for score in scores:
        grouped.setdefault(score.entry_id, []).append(score)
    expected = set(expected_backends) if expected_backends is not None else {
        score.backend_id for group in grouped.values() for score in group
    }
    verdicts: dict[str, DesirednessVerdict] = {}
    incomplete: list[str] = []
    for entry_id in sorted(grouped):
        group = grouped[entry_id]
        if {score.backend_id for score in group} != expected:
            incomplete.append(entry_id)
            continue
        verdicts[entry_id] = median_consensus(group)
    return verdicts, incomplete


def partition(
    corpus: Corpus, verdicts: Mapping[str, DesirednessVerdict]
) -> tuple[list[ReviewEntry], list[ReviewEntry], list[ReviewEntry]]:
    """Split corpus entries into (desired, undesired, unscorable), order preserved.

    Entries without a verdict (no fix recorded, or scoring incomplete) land
    in the unscorable bucket. A verdict for an id absent from the corpus is
    an error.
    """
    known = {entry.entry_id for entry in corpus}
    for entry_id in verdicts:
        if entry_id not in known:
            raise ValueError(f"verdict references unknown entry_id {entry_id!r}")
    desired: list[ReviewEntry] = []
    undesired: list[ReviewEntry] = []
    unscorable: list[ReviewEntry] = []
    for entry in corpus:
        verdict = verdicts.get(entry.entry_id)
        if verdict is None:
            unscorable.append(entry)
        elif verdict.verdict is Label.DESIRED:
            desired.append(entry)
        else:
            undesired.append(entry)
    return desired, undesired, unscorable


def emit_sft(
    entries: Sequence[ReviewEntry], *, truncation_limit: int, counter: TokenCounter
) -> list[SftRecord]:
    """Instruction-tuning records for desired entries: hunk in, comment out."""
    records: list[SftRecord] = []
    for entry in entries:
        hunk, truncated = truncate_tokens(entry.old_hunk, truncation_limit, counter)
        records.append(
            SftRecord(
                entry_id=entry.entry_id,
                instruction_prompt=render_review_prompt(hunk),
                target_comment=entry.comment,
                hunk=hunk,
                truncated=truncated,
            )
        )
    return records


def emit_kto(
    entries: Sequence[ReviewEntry],
    verdicts: Mapping[str, DesirednessVerdict],
    *,
    truncation_limit: int,
    counter: TokenCounter,
) -> list[KtoRecord]:
    """Alignment records for every scored entry, labeled by its verdict."""
    records: list[KtoRecord] = []
    for entry in entries:
        verdict = verdicts.get(entry.entry_id)
        if verdict is None:
            raise ValueError(f"no verdict for entry_id {entry.entry_id!r}")
        hunk, truncated = truncate_tokens(entry.old_hunk, truncation_limit, counter)
        records.append(
            KtoRecord(
                entry_id=entry.entry_id,
                prompt=render_review_prompt(hunk),
                completion=entry.comment,
                label=verdict.verdict,
                truncated=truncated,
            )
        )
    return records


def stats(verdicts: Mapping[str, DesirednessVerdict], *, unscorable: int = 0) -> CorpusStats:
    """Desired/undesired counts with half-up two-decimal percentages.

    Percentages cover scored entries only; with nothing scored they are
    None, never a fake zero.
    """
    desired = sum(1 for v in verdicts.values() if v.verdict is Label.DESIRED)
    undesired = len(verdicts) - desired
    scored = desired + undesired
    return CorpusStats(
        total=scored + unscorable,
        desired=desired,
        undesired=undesired,
        desired_pct=percentage(desired, scored) if scored else None,
        undesired_pct=percentage(undesired, scored) if scored else None,
        unscorable=unscorable,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_verdicts(path: str | Path, verdicts: Iterable[DesirednessVerdict]) -> int:
    return write_jsonl(path, (v.to_record() for v in verdicts))


def read_verdicts(path: str | Path) -> dict[str, DesirednessVerdict]:
    verdicts: dict[str, DesirednessVerdict] = {}
    for lineno, record in iter_jsonl(path):
        if set(record) != set(VERDICT_FIELDS):
            raise CorpusFormatError(
                f"expected fields {list(VERDICT_FIELDS)}, got {sorted(record)}",
                line=lineno,
                path=str(path),
            )
        try:
            verdict = DesirednessVerdict(
                entry_id=record["entry_id"],
                per_backend_ds=tuple(sorted((k, float(v)) for k, v in record["per_backend_ds"].items())),
                consensus_ds=float(record["consensus_ds"]),
                verdict=Label(record["verdict"]),
            )
        except (TypeError, ValueError, AttributeError) as exc:
            raise CorpusFormatError(f"bad verdict record: {exc}", line=lineno, path=str(path)) from exc
        if verdict.entry_id in verdicts:
            raise CorpusFormatError(
                f"duplicate entry_id {verdict.entry_id!r}", line=lineno, path=str(path)
            )
        verdicts[verdict.entry_id] = verdict
    return verdicts


def write_sft(path: str | Path, records: Iterable[SftRecord]) -> int:
    return write_jsonl(path, (r.to_record() for r in records))


def write_kto(path: str | Path, records: Iterable[KtoRecord]) -> int:
    return write_jsonl(path, (r.to_record() for r in records))


def write_stats(path: str | Path, corpus_stats: CorpusStats) -> None:
    Path(path).write_text(dump_record(corpus_stats.to_record()) + "\n", encoding="utf-8")
