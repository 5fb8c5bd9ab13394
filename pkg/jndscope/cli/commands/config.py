"""Configuration management commands."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import typer
from rich.syntax import Syntax

from jndscope.configuration import (
    ConfigurationError,
    load_config,
    locate_config_file,
    render_toml,
)
from jndscope.logging import console, diagnostic
from jndscope.paths import detect_repo_root

from ..common import COMMAND_CONTEXT, config_option, handle_errors
from ..type_defs import CommandMap


def _default_config_path() -> Path:
    root = detect_repo_root() or Path.cwd()
    return root / "configs" / "config.toml"


def register(app: typer.Typer) -> CommandMap:
    config_app = typer.Typer(
        help="Manage jndscope configuration.",
        context_settings=COMMAND_CONTEXT,
        no_args_is_help=True,
    )

    @config_app.command(context_settings=COMMAND_CONTEXT)
    def init(
        path: Optional[Path] = typer.Option(
            None, "--path", help="Where to write (default: configs/config.toml).", dir_okay=False
        ),
        force: bool = typer.Option(False, "--force", "-f", help="Overwrite an existing file."),
    ) -> None:
        """Write a commented default configuration file."""
        target = path or _default_config_path()
        if target.exists() and not force:
            console.print(f"[warn]Config file already exists: {target}[/]")
            console.print("[info]Use --force to overwrite.[/]")
            raise typer.Exit(code=1)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(render_toml(), encoding="utf-8")
        console.print(f"[ok]Created config file: {target}[/]")

    @config_app.command(context_settings=COMMAND_CONTEXT)
    @handle_errors
    def show(
        config: Optional[Path] = config_option(),
        format: str = typer.Option("toml", "--format", help="Output format (toml or json)."),
    ) -> None:
        """Display the effective configuration (defaults merged with the file)."""
        format = format.lower()
        if format not in {"toml", "json"}:
            raise typer.BadParameter(f"unsupported format {format!r}", param_hint="--format")
        effective = load_config(config).to_dict()
        if format == "json":
            typer.echo(json.dumps(effective, indent=2, sort_keys=True))
            return
        console.print(Syntax(render_toml(effective), "toml", theme="monokai", line_numbers=False))

    @config_app.command(context_settings=COMMAND_CONTEXT)
    def validate(config: Optional[Path] = config_option()) -> None:
        """Validate a configuration file without running anything."""
        try:
            source = config or locate_config_file()
            load_config(config)
        except ConfigurationError as exc:
            diagnostic(type(exc).__name__, str(exc))
            raise typer.Exit(code=1) from exc
        label = source if source is not None else "built-in defaults"
        console.print(f"[ok]Configuration is valid[/] [muted]({label})[/]")

    app.add_typer(config_app, name="config")
    return {}
