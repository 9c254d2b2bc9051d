"""Unpaired preference-alignment objective, in pure form.

Audits alignment datasets and externally computed log-probabilities: the
reward is the policy/reference log-ratio, desired examples are pushed above
a KL reference point and undesired ones below it through a sigmoid, and the
desired/undesired weights must keep the weighted class ratio inside
[1, 4/3]. No parameter updates happen here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Sequence

from .corpus import Label
from .errors import CorpusFormatError
from .util import iter_jsonl

AUDIT_FIELDS = ("policy_logprob", "ref_logprob", "label")

RATIO_LOW = 1.0
RATIO_HIGH = 4.0 / 3.0


@dataclass(frozen=True)
class KTOConfig:
    beta: float = 0.1
    lambda_desired: float = 1.7
    lambda_undesired: float = 1.0
    lambda_y: float = 1.0

    def __post_init__(self) -> None:
        for name in ("beta", "lambda_desired", "lambda_undesired", "lambda_y"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class KTOExample:
    policy_logprob: float
    ref_logprob: float
    label: Label

    def __post_init__(self) -> None:
        if not (math.isfinite(self.policy_logprob) and math.isfinite(self.ref_logprob)):
            raise ValueError("logprobs must be finite")


@dataclass(frozen=True)
class LambdaCheck:
    ratio: float
    ok: bool


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def reward(example: KTOExample) -> float:
    """log policy/reference ratio of the completion."""
    return example.policy_logprob - example.ref_logprob


def kl_reference_point(mismatched_rewards: Sequence[float]) -> float:
    """Estimate the KL anchor from rewards on mismatched prompt/completion pairs.

    The batch mean is clamped at zero: a KL divergence estimate cannot be
    negative.
    """
    if not mismatched_rewards:
        raise ValueError("mismatched_rewards must be non-empty")
    return max(0.0, fmean(mismatched_rewards))


def kto_value(r: float, z0: float, label: Label, cfg: KTOConfig) -> float:
    """Sigmoid-weighted value of one example given its reward and the KL anchor."""
    if label is Label.DESIRED:
        return cfg.lambda_desired * sigmoid(cfg.beta * (r - z0))
    return cfg.lambda_undesired * sigmoid(cfg.beta * (z0 - r))


def kto_loss(batch: Sequence[KTOExample], z0: float, cfg: KTOConfig) -> float:
    """Mean of (lambda_y - value) over the batch."""
    if not batch:
        raise ValueError("batch must be non-empty")
    return fmean(cfg.lambda_y - kto_value(reward(ex), z0, ex.label, cfg) for ex in batch)


def check_lambda_constraint(cfg: KTOConfig, n_desired: int, n_undesired: int) -> LambdaCheck:
    """Weighted class-balance ratio and whether it sits inside [1, 4/3] (inclusive)."""
    if n_desired <= 0 or n_undesired <= 0:
        raise ValueError("both class counts must be positive")
    ratio = (cfg.lambda_desired * n_desired) / (cfg.lambda_undesired * n_undesired)
    return LambdaCheck(ratio=ratio, ok=RATIO_LOW <= ratio <= RATIO_HIGH)


def suggested_lambda_desired(cfg: KTOConfig, n_desired: int, n_undesired: int) -> tuple[float, float]:
    """The lambda_desired interval that would satisfy the ratio constraint."""
    if n_desired <= 0 or n_undesired <= 0:
        raise ValueError("both class counts must be positive")
    base = cfg.lambda_undesired * n_undesired / n_desired
    return (RATIO_LOW * base, RATIO_HIGH * base)


def load_audit_examples(path: str | Path) -> list[KTOExample]:
    """Read a logprob audit file: one {policy_logprob, ref_logprob, label} per line."""
    examples: list[KTOExample] = []
    for lineno, record in iter_jsonl(path):
        if set(record) != set(AUDIT_FIELDS):
            raise CorpusFormatError(
                f"expected fields {list(AUDIT_FIELDS)}, got {sorted(record)}",
                line=lineno,
                path=str(path),
            )
        try:
            examples.append(
                KTOExample(
                    policy_logprob=float(record["policy_logprob"]),
                    ref_logprob=float(record["ref_logprob"]),
                    label=Label(record["label"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise CorpusFormatError(f"bad audit record: {exc}", line=lineno, path=str(path)) from exc
    return examples
