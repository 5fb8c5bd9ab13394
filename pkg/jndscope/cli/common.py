from __future__ import annotations

import functools
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Tuple, TypeVar

import typer

from jndscope import __version__
from jndscope.configuration import (
    ConfigurationError,
    JndscopeConfig,
    collect_overrides,
    load_config,
)
from jndscope.errors import JndscopeError
from jndscope.logging import console, diagnostic
from jndscope.paths import ensure_dir, run_dir

HELP_OPTION_NAMES = ("-h", "--help")
COMMAND_CONTEXT = {"help_option_names": list(HELP_OPTION_NAMES)}

F = TypeVar("F", bound=Callable[..., Any])


def print_version() -> None:
    console.print(f"[accent]jndscope[/] [muted]{__version__}[/]")


def config_option() -> Any:
    return typer.Option(
        None,
        "--config",
        "-c",
        help="Config file (TOML, or JSON by suffix); defaults to $JNDSCOPE_CONFIG or configs/config.toml.",
        dir_okay=False,
    )


def resolve_config(
    path: Optional[Path], overrides: Iterable[Tuple[str, Any]] = ()
) -> JndscopeConfig:
    """Load config with CLI flags applied as dotted overrides; unset flags are skipped."""
    return load_config(path, collect_overrides(overrides))


def run_directory(config: JndscopeConfig) -> Path:
    return ensure_dir(run_dir(config.run.root, config.run.name))


def handle_errors(func: F) -> F:
    """Turn domain and configuration failures into one diagnostic line and exit code 1."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except (JndscopeError, ConfigurationError, OSError) as exc:
            diagnostic(type(exc).__name__, str(exc))
            raise typer.Exit(code=1) from exc

    return wrapper  # type: ignore[return-value]
