"""Run configuration: backends, alignment weights, truncation, in one TOML file."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .backends import BackendConfig, BackendKind
from .errors import ConfigError
from .kto import KTOConfig
from .scoring import DEFAULT_TRUNCATION_LIMIT

_BACKEND_KEYS = {
    "backend_id",
    "kind",
    "endpoint",
    "model_name",
    "max_parallel",
    "retry_limit",
    "timeout",
    "prompt_prefix",
    "prompt_suffix",
    "seed_text",
    "token_counter",
    "context_limit",
    "api_key_env",
    "backoff_base",
}

_KTO_KEYS = {"beta", "lambda_desired", "lambda_undesired", "lambda_y"}


@dataclass(frozen=True)
class AppConfig:
    backends: tuple[BackendConfig, ...]
    kto: KTOConfig
    truncation_limit: int = DEFAULT_TRUNCATION_LIMIT

    def backend(self, backend_id: str) -> BackendConfig:
        for cfg in self.backends:
            if cfg.backend_id == backend_id:
                return cfg
        raise ConfigError(f"no backend named {backend_id!r} in configuration")

    def dump(self) -> str:
        """Effective configuration as one JSON object, for logs and manifests."""
        return json.dumps(
            {
                "truncation_limit": self.truncation_limit,
                "kto": {
                    "beta": self.kto.beta,
                    "lambda_desired": self.kto.lambda_desired,
                    "lambda_undesired": self.kto.lambda_undesired,
                    "lambda_y": self.kto.lambda_y,
                },
                "backends": [
                    {
                        "backend_id": b.backend_id,
                        "kind": b.kind.value,
                        "endpoint": b.endpoint,
                        "model_name": b.model_name,
                        "max_parallel": b.max_parallel,
                        "retry_limit": b.retry_limit,
                        "timeout": b.timeout,
                        "prompt_prefix": b.prompt_prefix,
                        "prompt_suffix": b.prompt_suffix,
                        "token_counter": b.token_counter,
                        "context_limit": b.context_limit,
                        "api_key_env": b.api_key_env,
                    }
                    for b in self.backends
                ],
            },
            ensure_ascii=False,
            sort_keys=True,
        )


def _build_backend(raw: dict, index: int) -> BackendConfig:
    unknown = set(raw) - _BACKEND_KEYS
    if unknown:
        raise ConfigError(f"backends[{index}]: unknown keys {sorted(unknown)}")
    if "backend_id" not in raw or "kind" not in raw:
        raise ConfigError(f"backends[{index}]: backend_id and kind are required")
    try:
        kind = BackendKind(raw["kind"])
    except ValueError:
        raise ConfigError(
            f"backends[{index}]: kind must be 'http' or 'reference', got {raw['kind']!r}"
        ) from None
    try:
        return BackendConfig(**{**raw, "kind": kind})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backends[{index}]: {exc}") from exc


def load_config(path: str | Path) -> AppConfig:
    """Parse and validate a TOML config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    unknown = set(raw) - {"backends", "kto", "truncation_limit"}
    if unknown:
        raise ConfigError(f"{path}: unknown top-level keys {sorted(unknown)}")

    limit = raw.get("truncation_limit", DEFAULT_TRUNCATION_LIMIT)
    if not isinstance(limit, int) or limit <= 0:
        raise ConfigError(f"{path}: truncation_limit must be a positive integer")

    raw_backends = raw.get("backends", [])
    if not isinstance(raw_backends, list):
        raise ConfigError(f"{path}: backends must be an array of tables")
    backend_configs = tuple(_build_backend(b, i) for i, b in enumerate(raw_backends))
    ids = [b.backend_id for b in backend_configs]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{path}: duplicate backend_id")

    raw_kto = raw.get("kto", {})
    if not isinstance(raw_kto, dict) or set(raw_kto) - _KTO_KEYS:
        raise ConfigError(f"{path}: kto section accepts keys {sorted(_KTO_KEYS)}")
    try:
        kto_config = KTOConfig(**raw_kto)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: kto: {exc}") from exc

    return AppConfig(backends=backend_configs, kto=kto_config, truncation_limit=limit)
