"""Configuration loading and merging."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import tomlkit
from pydantic import ValidationError

try:
    import tomllib  # Python 3.11+
except ImportError:  # pragma: no cover
    import tomli as tomllib

from jndscope.paths import detect_repo_root

from .defaults import DEFAULT_CONFIG_DICT, SECTION_COMMENTS
from .errors import ConfigurationError, InvalidConfig
from .schema import JndscopeConfig

ENV_CONFIG = "JNDSCOPE_CONFIG"


def locate_config_file() -> Optional[Path]:
    """Locate the configuration file: $JNDSCOPE_CONFIG, then the repo's configs/."""
    env_override = os.environ.get(ENV_CONFIG)
    if env_override:
        path = Path(env_override).expanduser()
        if not path.exists():
            raise ConfigurationError(f"{ENV_CONFIG} points to missing file: {path}")
        return path.resolve()

    repo_root = detect_repo_root()
    if repo_root:
        candidate = repo_root / "configs" / "config.toml"
        if candidate.exists():
            return candidate.resolve()
    return None


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse a TOML or JSON (by ``.json`` suffix) config file."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            with path.open("rb") as handle:
                data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"Invalid TOML in {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Invalid JSON in {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigurationError(f"Cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path} must contain a table at the top level")
    return data


def merge_configs(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """Deep merge dictionaries, returning a new dict."""
    result: Dict[str, Any] = copy.deepcopy(base)
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, Mapping):
            result[key] = merge_configs(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def dotted_override(key: str, value: Any) -> Dict[str, Any]:
    """Turn ``"train.search.window", 3`` into ``{"train": {"search": {"window": 3}}}``."""
    parts = [part for part in key.split(".") if part]
    if not parts:
        raise ConfigurationError(f"Invalid override key: {key!r}")
    nested: Dict[str, Any] = {parts[-1]: value}
    for part in reversed(parts[:-1]):
        nested = {part: nested}
    return nested


def collect_overrides(pairs: Iterable[tuple[str, Any]]) -> Dict[str, Any]:
    """Merge ``(dotted_key, value)`` pairs, skipping ``None`` values (unset CLI flags)."""
    merged: Dict[str, Any] = {}
    for key, value in pairs:
        if value is None:
            continue
        merged = merge_configs(merged, dotted_override(key, value))
    return merged


def load_config(
    path: Union[str, Path, None] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> JndscopeConfig:
    """Validate defaults <- config file <- overrides into a JndscopeConfig."""
    config_data = copy.deepcopy(DEFAULT_CONFIG_DICT)
    config_path = Path(path) if path is not None else locate_config_file()
    if config_path is not None:
        if not config_path.exists():
            raise ConfigurationError(f"Config file not found: {config_path}")
        config_data = merge_configs(config_data, read_config_file(config_path))
    if overrides:
        config_data = merge_configs(config_data, overrides)
    try:
        return JndscopeConfig.from_dict(config_data)
    except ValidationError as exc:
        raise InvalidConfig(_format_errors(exc)) from exc


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(item) for item in error.get("loc", ()))
        message = error.get("msg", "invalid value").removeprefix("Value error, ")
        parts.append(f"{location}: {message}" if location else message)
    return "; ".join(parts)


def render_toml(data: Optional[Mapping[str, Any]] = None) -> str:
    """Render a configuration mapping (defaults when omitted) as commented TOML."""
    source = DEFAULT_CONFIG_DICT if data is None else data
    document = tomlkit.document()
    document.add(tomlkit.comment("jndscope configuration"))
    document.add(tomlkit.nl())
    for section, values in source.items():
        table = tomlkit.table()
        comment = SECTION_COMMENTS.get(section)
        if comment:
            table.comment(comment)
        for key, value in values.items():
            table.add(key, _toml_value(value))
        document.add(section, table)
    return tomlkit.dumps(document)


def _toml_value(value: Any) -> Any:
    if isinstance(value, Mapping):
        table = tomlkit.table()
        for key, item in value.items():
            table.add(key, _toml_value(item))
        return table
    if isinstance(value, tuple):
        return list(value)
    return value
