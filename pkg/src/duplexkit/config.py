"""Backend configuration: key=value files, environment, then flags.

The file format is one ``key = value`` pair per line; ``#`` starts a
comment. Environment variables named ``DUPLEXKIT_<KEY>`` override file
values, and explicit overrides (command-line flags) beat both.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ConfigError", "BackendConfig", "load_key_values", "resolve_backend_config"]

ENV_PREFIX = "DUPLEXKIT_"


class ConfigError(Exception):
    pass


def load_key_values(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip().lower()] = value.strip()
    return values


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for a remote completion endpoint."""

    endpoint_url: str
    model: str = "default"
    system_prompt_path: str | None = None
    timeout_s: float = 30.0
    api_key: str | None = None
    max_tokens: int = 256

    def system_prompt(self, fallback: str) -> str:
        if self.system_prompt_path:
            return Path(self.system_prompt_path).read_text(encoding="utf-8")
        return fallback


_FIELDS = ("endpoint_url", "model", "system_prompt_path", "timeout_s", "api_key", "max_tokens")


def resolve_backend_config(
    path: str | Path | None,
    env: dict[str, str] | None = None,
    **overrides,
) -> BackendConfig:
    """Merge file, environment, and explicit overrides, in that order."""
    env = os.environ if env is None else env
    merged: dict[str, str] = {}
    if path is not None:
        file_values = load_key_values(path)
        unknown = set(file_values) - set(_FIELDS)
        if unknown:
            raise ConfigError(f"unknown backend config keys: {sorted(unknown)}")
        merged.update(file_values)
    for field in _FIELDS:
        env_key = ENV_PREFIX + field.upper()
        if env_key in env:
            merged[field] = env[env_key]
    for field, value in overrides.items():
        if field not in _FIELDS:
            raise ConfigError(f"unknown backend config key {field!r}")
        if value is not None:
            merged[field] = value
    if "endpoint_url" not in merged:
        raise ConfigError("no endpoint_url configured (file, env, or flag)")
    if "timeout_s" in merged:
        merged["timeout_s"] = float(merged["timeout_s"])
    if "max_tokens" in merged:
        merged["max_tokens"] = int(merged["max_tokens"])
    return BackendConfig(**merged)
