"""Public interface for the jndscope configuration system."""

from __future__ import annotations

from .errors import ConfigurationError, InvalidConfig
from .loader import (
    collect_overrides,
    dotted_override,
    load_config,
    locate_config_file,
    merge_configs,
    read_config_file,
    render_toml,
)
from .schema import JndscopeConfig

__all__ = [
    "ConfigurationError",
    "InvalidConfig",
    "collect_overrides",
    "JndscopeConfig",
    "dotted_override",
    "load_config",
    "locate_config_file",
    "merge_configs",
    "read_config_file",
    "render_toml",
]
