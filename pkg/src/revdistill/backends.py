"""Uniform interface over log-probability scoring and text-generating backends.

Two kinds are supported:

* ``http``: an OpenAI-style completions endpoint that echoes per-token
  logprobs. Scoring sends prompt+completion as the prompt with zero new
  tokens and reads the echoed logprob tail for the completion span, so no
  sampling is ever involved.
* ``reference``: a built-in byte-level bigram model with add-one smoothing
  over the 256 byte values. Counts accumulate sequentially over everything
  the model reads (seed text, then prompt, then earlier completion bytes),
  so each byte is scored against the full preceding context. Deterministic,
  dependency-free, and cheap enough for tests and offline runs.
"""

from __future__ import annotations

import json
import math
import os
import random
import time
import urllib.error
import urllib.request
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

from .errors import ContextOverflowError, ProtocolError, TransportError
from .tokenization import TokenCounter, get_counter

ALPHABET_SIZE = 256


@dataclass(frozen=True)
class TokenScore:
    """One completion token with its natural-log likelihood."""

    token_text: str
    logprob: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.logprob):
            raise ValueError(f"logprob must be finite, got {self.logprob!r}")


@dataclass(frozen=True)
class ScoredCompletion:
    prompt_token_count: int
    completion_scores: tuple[TokenScore, ...]

    def __post_init__(self) -> None:
        if not self.completion_scores:
            raise ValueError("completion_scores must be non-empty")

    @property
    def logprob_sum(self) -> float:
        return sum(score.logprob for score in self.completion_scores)

    @property
    def token_count(self) -> int:
        return len(self.completion_scores)


class BackendKind(str, Enum):
    HTTP = "http"
    REFERENCE = "reference"


@dataclass(frozen=True)
class BackendConfig:
    """Connection and behavior settings for one scoring backend."""

    backend_id: str
    kind: BackendKind
    endpoint: str | None = None
    model_name: str | None = None
    max_parallel: int = 1
    retry_limit: int = 3
    timeout: float = 60.0
    prompt_prefix: str = ""
    prompt_suffix: str = ""
    seed_text: str | None = None
    token_counter: str = "byte"
    context_limit: int | None = None
    api_key_env: str | None = None
    backoff_base: float = 0.25

    def __post_init__(self) -> None:
        if not self.backend_id:
            raise ValueError("backend_id must be non-empty")
        if self.kind is BackendKind.HTTP and not self.endpoint:
            raise ValueError(f"backend {self.backend_id!r}: http backends require an endpoint")
        if self.kind is BackendKind.REFERENCE:
            if self.seed_text is None or len(self.seed_text.encode("utf-8")) < 2:
                raise ValueError(f"backend {self.backend_id!r}: reference backends need seed_text of >= 2 bytes")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def build_reference_backend(seed_text: str, backend_id: str = "reference") -> BackendConfig:
    """Create a reference-backend config trained on ``seed_text`` (>= 2 bytes)."""
    return BackendConfig(backend_id=backend_id, kind=BackendKind.REFERENCE, seed_text=seed_text)


def token_counter_for(cfg: BackendConfig) -> TokenCounter:
    return get_counter(cfg.token_counter)


# ---------------------------------------------------------------------------
# Reference model
# ---------------------------------------------------------------------------


class SequentialBigramModel:
    """Byte bigram model with add-one smoothing and sequential count updates.

    The conditional for byte b after byte a is (count(a->b)+1)/(count(a)+256),
    where counts cover the seed text plus every byte pair already read in the
    current call. Queries against the seed alone use ``base_logprob``.
    """

    def __init__(self, seed_text: str):
        data = seed_text.encode("utf-8")
        if len(data) < 2:
            raise ValueError("seed_text must be at least 2 bytes")
        follow: dict[int, Counter] = defaultdict(Counter)
        context: Counter = Counter()
        for a, b in zip(data, data[1:]):
            follow[a][b] += 1
            context[a] += 1
        self._follow = dict(follow)
        self._context = context

    def base_logprob(self, context_byte: int | None, next_byte: int) -> float:
        """ln P(next | context) from the seed counts only."""
        if context_byte is None:
            return -math.log(ALPHABET_SIZE)
        transitions = self._follow.get(context_byte)
        hits = transitions[next_byte] if transitions else 0
        seen = self._context[context_byte]
        return math.log((hits + 1) / (seen + ALPHABET_SIZE))

    def score(self, prompt: str, completion: str) -> ScoredCompletion:
        """Score each completion byte against seed + all preceding bytes."""
        prompt_bytes = prompt.encode("utf-8")
        completion_bytes = completion.encode("utf-8")
        if not completion_bytes:
            raise ValueError("completion must be non-empty")
        delta_follow: dict[int, Counter] = defaultdict(Counter)
        delta_context: Counter = Counter()
        scores: list[TokenScore] = []
        sequence = prompt_bytes + completion_bytes
        for index, byte in enumerate(sequence):
            in_completion = index >= len(prompt_bytes)
            if index == 0:
                if in_completion:
                    scores.append(TokenScore(chr(byte), -math.log(ALPHABET_SIZE)))
                continue
            prev = sequence[index - 1]
            if in_completion:
                base = self._follow.get(prev)
                hits = (base[byte] if base else 0) + delta_follow[prev][byte]
                seen = self._context[prev] + delta_context[prev]
                scores.append(TokenScore(chr(byte), math.log((hits + 1) / (seen + ALPHABET_SIZE))))
            delta_follow[prev][byte] += 1
            delta_context[prev] += 1
        return ScoredCompletion(prompt_token_count=len(prompt_bytes), completion_scores=tuple(scores))

    def generate(self, prompt: str, max_tokens: int) -> str:
        """Greedy byte-by-byte generation; count ties pick the lowest byte value."""
        prompt_bytes = prompt.encode("utf-8")
        delta_follow: dict[int, Counter] = defaultdict(Counter)
        delta_context: Counter = Counter()
        for a, b in zip(prompt_bytes, prompt_bytes[1:]):
            delta_follow[a][b] += 1
            delta_context[a] += 1
        last = prompt_bytes[-1] if prompt_bytes else None
        out = bytearray()
        for _ in range(max_tokens):
            nxt = self._argmax_next(last, delta_follow)
            out.append(nxt)
            if last is not None:
                delta_follow[last][nxt] += 1
                delta_context[last] += 1
            last = nxt
        return out.decode("utf-8", errors="replace")

    def _argmax_next(self, context_byte: int | None, delta_follow: dict[int, Counter]) -> int:
        if context_byte is None:
            return 0
        combined: Counter = Counter(self._follow.get(context_byte, {}))
        combined.update(delta_follow.get(context_byte, {}))
        if not combined:
            return 0
        best_count = max(combined.values())
        return min(byte for byte, count in combined.items() if count == best_count)


@lru_cache(maxsize=32)
def _reference_model(seed_text: str) -> SequentialBigramModel:
    return SequentialBigramModel(seed_text)


# ---------------------------------------------------------------------------
# HTTP client
# ---------------------------------------------------------------------------


class _RetryableFailure(Exception):
    pass


def _request_body(payload: dict) -> bytes:
    # canonical body: sorted keys, compact separators; documented in docs/http-protocol.md
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _post_json(cfg: BackendConfig, payload: dict) -> dict:
    assert cfg.endpoint is not None
    headers = {"Content-Type": "application/json"}
    if cfg.api_key_env:
        key = os.environ.get(cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
    request = urllib.request.Request(cfg.endpoint, data=_request_body(payload), headers=headers, method="POST")
    try:
        with urllib.request.urlopen(request, timeout=cfg.timeout) as response:
            raw = response.read()
    except urllib.error.HTTPError as exc:
        body = exc.read()[:512]
        if exc.code >= 500 or exc.code == 429:
            raise _RetryableFailure(f"HTTP {exc.code}: {body!r}") from exc
        raise ProtocolError(f"backend {cfg.backend_id!r}: HTTP {exc.code}: {body!r}") from exc
    except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
        raise _RetryableFailure(str(exc)) from exc
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"backend {cfg.backend_id!r}: response is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ProtocolError(f"backend {cfg.backend_id!r}: response is not a JSON object")
    return data


def _post_with_retries(cfg: BackendConfig, payload: dict) -> dict:
    last_error: _RetryableFailure | None = None
    for attempt in range(cfg.retry_limit):
        try:
            return _post_json(cfg, payload)
        except _RetryableFailure as exc:
            last_error = exc
            if attempt + 1 < cfg.retry_limit:
                delay = cfg.backoff_base * (2**attempt)
                time.sleep(delay + random.uniform(0, delay))
    raise TransportError(
        f"backend {cfg.backend_id!r}: request failed after {cfg.retry_limit} attempts: {last_error}"
    ) from last_error


def _choice_logprobs(cfg: BackendConfig, data: dict) -> tuple[list[str], list]:
    try:
        choice = data["choices"][0]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError(f"backend {cfg.backend_id!r}: response has no choices") from None
    logprobs = choice.get("logprobs")
    if not isinstance(logprobs, dict):
        raise ProtocolError(f"backend {cfg.backend_id!r}: response missing logprobs block")
    tokens = logprobs.get("tokens")
    token_logprobs = logprobs.get("token_logprobs")
    if not isinstance(tokens, list) or not isinstance(token_logprobs, list):
        raise ProtocolError(f"backend {cfg.backend_id!r}: logprobs block missing tokens/token_logprobs")
    if len(tokens) != len(token_logprobs):
        raise ProtocolError(
            f"backend {cfg.backend_id!r}: {len(tokens)} tokens but {len(token_logprobs)} logprobs"
        )
    return tokens, token_logprobs


def _split_completion_span(
    cfg: BackendConfig, tokens: list[str], sent_text: str, completion: str
) -> int:
    """Index of the first completion token, located by cumulative text length.

    The server may tokenize the concatenated text differently from the
    client's prompt/completion split; if no token boundary lands exactly on
    the completion start, that is a protocol error, never a silent shift.
    """
    boundary = len(sent_text) - len(completion)
    cumulative = 0
    for index, token in enumerate(tokens):
        if not isinstance(token, str):
            raise ProtocolError(f"backend {cfg.backend_id!r}: non-string token in logprobs")
        if cumulative == boundary:
            return index
        if cumulative > boundary:
            break
        cumulative += len(token)
    if cumulative == boundary:  # completion span would be empty
        raise ProtocolError(f"backend {cfg.backend_id!r}: echoed tokens cover no completion span")
    if cumulative < boundary:
        raise ProtocolError(f"backend {cfg.backend_id!r}: echoed tokens shorter than the sent text")
    raise ProtocolError(
        f"backend {cfg.backend_id!r}: completion boundary at offset {boundary} falls inside a token "
        "(server re-tokenized across the prompt/completion split)"
    )


def _http_score(cfg: BackendConfig, sent_text: str, completion: str) -> ScoredCompletion:
    payload = {
        "model": cfg.model_name,
        "prompt": sent_text,
        "max_tokens": 0,
        "echo": True,
        "logprobs": 0,
        "temperature": 0,
    }
    data = _post_with_retries(cfg, payload)
    tokens, token_logprobs = _choice_logprobs(cfg, data)
    start = _split_completion_span(cfg, tokens, sent_text, completion)
    try:
        span_text = "".join(tokens[start:])
    except TypeError:
        raise ProtocolError(f"backend {cfg.backend_id!r}: non-string token in logprobs") from None
    if span_text != completion:
        raise ProtocolError(
            f"backend {cfg.backend_id!r}: echoed completion span does not reproduce the completion text"
        )
    scores: list[TokenScore] = []
    for token, logprob in zip(tokens[start:], token_logprobs[start:]):
        if logprob is None or not isinstance(logprob, (int, float)):
            raise ProtocolError(f"backend {cfg.backend_id!r}: missing logprob inside completion span")
        scores.append(TokenScore(token_text=token, logprob=float(logprob)))
    return ScoredCompletion(prompt_token_count=start, completion_scores=tuple(scores))


def _http_generate(cfg: BackendConfig, sent_text: str, temperature: float, max_tokens: int) -> str:
    payload = {
        "model": cfg.model_name,
        "prompt": sent_text,
        "max_tokens": max_tokens,
        "temperature": temperature,
    }
    data = _post_with_retries(cfg, payload)
    try:
        text = data["choices"][0]["text"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError(f"backend {cfg.backend_id!r}: response has no completion text") from None
    if not isinstance(text, str):
        raise ProtocolError(f"backend {cfg.backend_id!r}: completion text is not a string")
    return text


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _wrap_prompt(cfg: BackendConfig, prompt: str) -> str:
    return f"{cfg.prompt_prefix}{prompt}{cfg.prompt_suffix}"


def _check_context(cfg: BackendConfig, wrapped_prompt: str, completion: str) -> None:
    if cfg.context_limit is None:
        return
    counter = token_counter_for(cfg)
    prompt_tokens = counter.count(wrapped_prompt)
    completion_tokens = counter.count(completion)
    if prompt_tokens + completion_tokens > cfg.context_limit:
        raise ContextOverflowError(
            f"backend {cfg.backend_id!r}: input exceeds context limit",
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            limit=cfg.context_limit,
        )


def score_completion(cfg: BackendConfig, prompt: str, completion: str) -> ScoredCompletion:
    """Per-token logprobs of ``completion`` conditioned on ``prompt``.

    Pure likelihood evaluation: nothing is sampled. The configured
    prefix/suffix pair is applied around the prompt before scoring.
    """
    if not completion.strip():
        raise ValueError("completion must be non-empty")
    wrapped = _wrap_prompt(cfg, prompt)
    _check_context(cfg, wrapped, completion)
    if cfg.kind is BackendKind.REFERENCE:
        assert cfg.seed_text is not None
        return _reference_model(cfg.seed_text).score(wrapped, completion)
    return _http_score(cfg, wrapped + completion, completion)


def generate(cfg: BackendConfig, prompt: str, *, temperature: float = 0.0, max_tokens: int = 16) -> str:
    """Completion text for ``prompt``; temperature 0 requests greedy decoding."""
    if not prompt.strip():
        raise ValueError("prompt must be non-empty")
    if max_tokens < 0:
        raise ValueError("max_tokens must be >= 0")
    if max_tokens == 0:
        return ""
    wrapped = _wrap_prompt(cfg, prompt)
    if cfg.kind is BackendKind.REFERENCE:
        assert cfg.seed_text is not None
        # the reference model is always greedy, matching temperature 0
        return _reference_model(cfg.seed_text).generate(wrapped, max_tokens)
    return _http_generate(cfg, wrapped, temperature, max_tokens)
