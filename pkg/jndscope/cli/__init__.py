from __future__ import annotations

import sys
from typing import List, Optional

import click
import typer

from jndscope import __description__
from jndscope.configuration import ConfigurationError
from jndscope.errors import JndscopeError
from jndscope.logging import diagnostic

from .commands import register as register_commands
from .common import COMMAND_CONTEXT, print_version

PROG_NAME = "jndscope"

app = typer.Typer(
    name=PROG_NAME,
    help=__description__,
    context_settings=COMMAND_CONTEXT,
    rich_markup_mode="rich",
    no_args_is_help=True,
    pretty_exceptions_enable=False,
)

register_commands(app)


@app.callback()
def _root_command(
    version: bool = typer.Option(
        False,
        "-v",
        "--version",
        help="Show CLI version and exit.",
        is_eager=True,
    ),
) -> None:
    if version:
        print_version()
        raise typer.Exit()


def run(argv: Optional[List[str]] = None) -> int:
    """Invoke the CLI and return its exit code: 0 ok, 1 runtime failure, 2 usage error."""
    args = list(sys.argv[1:] if argv is None else argv)
    try:
        result = app(args, prog_name=PROG_NAME, standalone_mode=False)
    except click.UsageError as exc:
        command = exc.ctx.command_path if exc.ctx is not None else PROG_NAME
        diagnostic("UsageError", f"{exc.format_message()} (try '{command} --help')", usage=True)
        return 2
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.Abort:
        diagnostic("Aborted", "interrupted")
        return 1
    except (JndscopeError, ConfigurationError, OSError) as exc:
        diagnostic(type(exc).__name__, str(exc))
        return 1
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(run())


__all__ = ["app", "main", "run"]
