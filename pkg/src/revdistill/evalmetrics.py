"""Evaluation of verdicts against human labels, plus baselines and text metrics.

Covers the identification side (confusion counts, accuracy/precision/recall/F1,
the change-exists baseline, an LLM judge) and the generation side (sentence
BLEU-4 with add-one smoothing), plus a 2x2 chi-squared agreement test.
The positive class everywhere is "desired".
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from . import backends
from .backends import BackendConfig
from .corpus import Label, ReviewEntry
from .errors import JudgeParseError, UnscorableEntryError
from .util import round_half_up

JUDGE_PROMPT = (
    "Your task is to determine whether the changes in the given original code "
    "and the modified code pertain to the provided review comment. If they "
    "pertain, output True; if they do not pertain, output False. Only provide "
    "True or False, without any additional content.\n"
    "```original code\n"
    "{old}\n"
    "```\n"
    "```modified code\n"
    "{new}\n"
    "```\n"
    "```review comment\n"
    "{comment}\n"
    "```\n"
)

_LEADING_WORD = re.compile(r"\s*([A-Za-z]+)")
_BLEU_TOKEN = re.compile(r"\w+|[^\w\s]", re.UNICODE)

MAX_NGRAM_ORDER = 4


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    """Fractions in [0, 1]; None marks a ratio whose denominator was zero."""

    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None

    def percentages(self) -> dict[str, float | None]:
        """The reporting form: percentages rounded half-up to two decimals."""
        return {
            name: None if value is None else round_half_up(value * 100)
            for name, value in (
                ("accuracy", self.accuracy),
                ("precision", self.precision),
                ("recall", self.recall),
                ("f1", self.f1),
            )
        }

    def table(self) -> str:
        cells = {k: ("n/a" if v is None else f"{v:.2f}") for k, v in self.percentages().items()}
        header = f"{'Accuracy':>10s}{'Precision':>11s}{'Recall':>8s}{'F1-Score':>10s}"
        row = f"{cells['accuracy']:>10s}{cells['precision']:>11s}{cells['recall']:>8s}{cells['f1']:>10s}"
        return header + "\n" + row


def confusion(verdicts: Mapping[str, Label], labels: Mapping[str, Label]) -> ConfusionCounts:
    """Count agreement over the labeled ids; every labeled id needs a verdict."""
    tp = fp = fn = tn = 0
    for entry_id, truth in labels.items():
        if entry_id not in verdicts:
            raise ValueError(f"no verdict for labeled entry_id {entry_id!r}")
        predicted = verdicts[entry_id]
        if truth is Label.DESIRED:
            if predicted is Label.DESIRED:
                tp += 1
            else:
                fn += 1
        else:
            if predicted is Label.DESIRED:
                fp += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def metrics(counts: ConfusionCounts) -> MetricsReport:
    """Standard identification metrics; zero-denominator ratios become None."""
    if counts.total == 0:
        raise ValueError("confusion counts are all zero")
    accuracy = (counts.tp + counts.tn) / counts.total
    precision = counts.tp / (counts.tp + counts.fp) if (counts.tp + counts.fp) else None
    recall = counts.tp / (counts.tp + counts.fn) if (counts.tp + counts.fn) else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MetricsReport(accuracy=accuracy, precision=precision, recall=recall, f1=f1)


def _normalize_trailing_whitespace(text: str) -> str:
    lines = [line.rstrip() for line in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def ten_line_rule(entry: ReviewEntry) -> Label:
    """Change-exists baseline: desired iff a fix was recorded and actually differs.

    Trailing whitespace is normalized before comparison; entries without a
    recorded fix count as undesired (no subsequent modification).
    """
    if entry.new_hunk is None:
        return Label.UNDESIRED
    changed = _normalize_trailing_whitespace(entry.new_hunk) != _normalize_trailing_whitespace(
        entry.old_hunk
    )
    return Label.DESIRED if changed else Label.UNDESIRED


def render_judge_prompt(old_code: str, new_code: str, comment: str) -> str:
    return JUDGE_PROMPT.format(old=old_code, new=new_code, comment=comment)


def parse_judgment(text: str) -> Label:
    """Map a judge's output to a label via its leading word, case-insensitively.

    "True." and "false," parse fine; anything whose first word is not
    true/false is a parse error, never a silent verdict.
    """
    match = _LEADING_WORD.match(text)
    word = match.group(1).lower() if match else None
    if word == "true":
        return Label.DESIRED
    if word == "false":
        return Label.UNDESIRED
    raise JudgeParseError(f"judge output is neither True nor False: {text[:80]!r}")


def llm_judge(entry: ReviewEntry, cfg: BackendConfig, *, max_tokens: int = 8) -> Label:
    """Ask a backend whether the fix pertains to the comment (greedy decoding)."""
    if entry.new_hunk is None:
        raise UnscorableEntryError(f"entry {entry.entry_id!r} has no recorded code fix to judge")
    prompt = render_judge_prompt(entry.old_hunk, entry.new_hunk, entry.comment)
    answer = backends.generate(cfg, prompt, temperature=0.0, max_tokens=max_tokens)
    return parse_judgment(answer)


def bleu_tokenize(text: str) -> list[str]:
    """Lowercase, then split into word runs and single punctuation marks."""
    return _BLEU_TOKEN.findall(text.lower())


def _ngram_counts(tokens: Sequence[str], order: int) -> Counter:
    return Counter(tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1))


def bleu4(candidate: str, reference: str) -> float:
    """Sentence BLEU-4: modified n-gram precisions, brevity penalty, add-one smoothing.

    Zero precisions of order >= 2 are smoothed to 1/(count+1); a zero unigram
    precision (or an empty candidate) short-circuits to 0.
    """
    if not reference.strip():
        raise ValueError("reference must be non-empty")
    cand = bleu_tokenize(candidate)
    ref = bleu_tokenize(reference)
    if not cand:
        return 0.0
    log_precision_sum = 0.0
    for order in range(1, MAX_NGRAM_ORDER + 1):
        cand_counts = _ngram_counts(cand, order)
        ref_counts = _ngram_counts(ref, order)
        total = max(0, len(cand) - order + 1)
        matched = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        if matched == 0:
            if order == 1:
                return 0.0
            precision = 1.0 / (total + 1)
        else:
            precision = matched / total
        log_precision_sum += math.log(precision)
    if len(cand) >= len(ref):
        brevity_penalty = 1.0
    else:
        brevity_penalty = math.exp(1.0 - len(ref) / len(cand))
    return brevity_penalty * math.exp(log_precision_sum / MAX_NGRAM_ORDER)


def bleu4_corpus(candidates: Sequence[str], references: Sequence[str]) -> float:
    """Mean sentence-level BLEU-4 over aligned candidate/reference pairs."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("nothing to score")
    return sum(bleu4(c, r) for c, r in zip(candidates, references)) / len(candidates)


@dataclass(frozen=True)
class ChiSquaredResult:
    statistic: float
    p_value: float


def chi_squared_2x2(table: Sequence[Sequence[int]]) -> ChiSquaredResult:
    """Pearson chi-squared for a 2x2 table, no continuity correction.

    The p-value is the df=1 upper tail, evaluated in closed form as
    erfc(sqrt(statistic/2)); all marginals must be positive.
    """
    if len(table) != 2 or any(len(row) != 2 for row in table):
        raise ValueError("table must be 2x2")
    (a, b), (c, d) = (tuple(table[0]), tuple(table[1]))
    for value in (a, b, c, d):
        if value < 0:
            raise ValueError("cell counts must be non-negative")
    row1, row2, col1, col2 = a + b, c + d, a + c, b + d
    if min(row1, row2, col1, col2) == 0:
        raise ValueError("all row and column sums must be positive")
    n = row1 + row2
    statistic = n * (a * d - b * c) ** 2 / (row1 * row2 * col1 * col2)
    return ChiSquaredResult(statistic=statistic, p_value=math.erfc(math.sqrt(statistic / 2.0)))
