"""Runtime configuration with fixed precedence: flag > env > file > default.

The config file is JSON carrying exactly the RuntimeConfig keys; the
embedded ``policy`` object uses the policy file schema. Environment
overrides use ``FORGELOOP_<FIELD>`` names; the credential lives only in
``FORGELOOP_API_KEY`` and is never written anywhere.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .execution import Policy
from .parsing import BlockKind, ParserConfig

CONFIG_ENV = "FORGELOOP_CONFIG"
ENV_PREFIX = "FORGELOOP_"

DEFAULT_ENDPOINT = "https://api.openai.com"
DEFAULT_MODEL = "gpt-4"
DEFAULT_SESSION_ROOT = "sessions"
DEFAULT_CONSOLE_PORT = 7466


class ConfigError(Exception):
    pass


@dataclass
class RuntimeConfig:
    endpoint_url: str = DEFAULT_ENDPOINT
    model_id: str = DEFAULT_MODEL
    templates_dir: str | None = None
    policy: Policy = field(default_factory=Policy)
    parser: ParserConfig = field(default_factory=ParserConfig)
    session_root: str = DEFAULT_SESSION_ROOT
    max_steps: int = 30
    history_window: int = 20
    console_port: int = DEFAULT_CONSOLE_PORT

    def __post_init__(self):
        if self.max_steps < 1:
            raise ConfigError("max_steps must be positive")
        if self.history_window < 0:
            raise ConfigError("history_window must be non-negative")


_INT_FIELDS = {"max_steps", "history_window", "console_port"}


def _parser_from_dict(raw: dict) -> ParserConfig:
    known = {"tags", "pause_marker"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown parser keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    if "tags" in raw:
        try:
            kwargs["tag_map"] = {
                tag: BlockKind(kind) for tag, kind in raw["tags"].items()
            }
        except (ValueError, AttributeError) as exc:
            raise ConfigError(f"bad parser tag map: {exc}") from None
    if "pause_marker" in raw:
        kwargs["pause_marker"] = str(raw["pause_marker"])
    return ParserConfig(**kwargs)


def _coerce(name: str, value):
    if value is None:
        return None
    if name == "policy":
        if isinstance(value, Policy):
            return value
        if isinstance(value, dict):
            return Policy.from_dict(value)
        raise ConfigError("policy must be an object")
    if name == "parser":
        if isinstance(value, ParserConfig):
            return value
        if isinstance(value, dict):
            return _parser_from_dict(value)
        raise ConfigError("parser must be an object")
    if name in _INT_FIELDS:
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be an integer, got {value!r}") from None
    return value


def load_config(
    flags: dict | None = None,
    env: dict | None = None,
    config_path: str | Path | None = None,
) -> RuntimeConfig:
    """Merge the four layers in precedence order and validate the result."""
    flags = {k: v for k, v in (flags or {}).items() if v is not None}
    env = os.environ if env is None else env

    file_values: dict = {}
    path = config_path or env.get(CONFIG_ENV)
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_values = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path} must hold an object")

    values: dict = {}
    known = {f.name for f in fields(RuntimeConfig)}
    unknown = set(file_values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for name in known:
        if name in file_values:
            values[name] = _coerce(name, file_values[name])
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = _coerce(name, env[env_key])
        if name in flags:
            values[name] = _coerce(name, flags[name])
    return RuntimeConfig(**values)


def api_key(env: dict | None = None) -> str | None:
    env = os.environ if env is None else env
    return env.get("FORGELOOP_API_KEY") or None
