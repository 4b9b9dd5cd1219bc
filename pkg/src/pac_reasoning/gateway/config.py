"""Endpoint configuration for the thinking, nonthinking and embedding models."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from ..exceptions import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.7
    top_p: float = 0.8
    top_k: int = 20
    min_p: float = 0.0
    max_tokens: int | None = None
    request_timeout: float = 120.0
    max_parallel: int = 4
    max_retries: int = 5
    backoff_seconds: float = 0.5
    extra_body: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ConfigError("max_parallel must be positive")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    @property
    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env) if self.api_key_env else None

    def sampling_params(self) -> dict[str, Any]:
        params = {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "top_k": self.top_k,
            "min_p": self.min_p,
        }
        if self.max_tokens is not None:
            params["max_tokens"] = self.max_tokens
        params.update(self.extra_body)
        return params


def nonthinking_defaults(base_url: str, model_name: str, **kw) -> EndpointConfig:
    return EndpointConfig(base_url, model_name, temperature=0.7, top_p=0.8, top_k=20, min_p=0.0, **kw)


def thinking_defaults(base_url: str, model_name: str, **kw) -> EndpointConfig:
    return EndpointConfig(base_url, model_name, temperature=0.6, top_p=0.95, top_k=20, min_p=0.0, **kw)


@dataclass(frozen=True)
class Endpoints:
    nonthinking: EndpointConfig | None = None
    thinking: EndpointConfig | None = None
    embedding: EndpointConfig | None = None
    cache_dir: Path = Path(".pac_cache")


_ROLE_DEFAULTS = {"nonthinking": nonthinking_defaults, "thinking": thinking_defaults}


def load_endpoints(path) -> Endpoints:
    """Read endpoint settings from TOML (or JSON) with one table per role.

    Each role table needs ``base_url`` and ``model_name``; unspecified
    sampling parameters take that role's defaults.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
        data = json.loads(raw) if path.suffix == ".json" else tomllib.loads(raw.decode())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read endpoint config {path}: {exc}") from exc
    roles: dict[str, EndpointConfig] = {}
    for role in ("nonthinking", "thinking", "embedding"):
        if role not in data:
            continue
        section = dict(data[role])
        try:
            base_url = section.pop("base_url")
            model = section.pop("model_name")
        except KeyError as exc:
            raise ConfigError(f"[{role}] is missing {exc.args[0]!r}") from None
        make = _ROLE_DEFAULTS.get(role)
        try:
            cfg = make(base_url, model) if make else EndpointConfig(base_url, model)
            roles[role] = replace(cfg, **section)
        except TypeError as exc:
            raise ConfigError(f"[{role}]: {exc}") from None
    cache_dir = Path(data.get("cache_dir", ".pac_cache"))
    if not cache_dir.is_absolute():
        cache_dir = path.parent / cache_dir
    return Endpoints(cache_dir=cache_dir, **roles)
