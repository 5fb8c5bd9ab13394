"""Run the invariant suite."""

from __future__ import annotations

import typer

from jndscope import ui
from jndscope.logging import step_progress
from jndscope.selftest import CHECKS, run_selftest

from ..common import COMMAND_CONTEXT
from ..type_defs import CommandMap


def register(app: typer.Typer) -> CommandMap:
    @app.command(context_settings=COMMAND_CONTEXT)
    def selftest() -> None:
        """Check attention, search, gradients, aggregation, patching and metrics."""
        with step_progress("Running self-checks", len(CHECKS)) as progress:
            results = run_selftest(progress.callback())
        ui.print_table(
            ("check", "status", "detail", "seconds"),
            [
                (
                    r.name,
                    "[ok]pass[/]" if r.passed else "[error]FAIL[/]",
                    r.detail,
                    f"{r.seconds:.2f}",
                )
                for r in results
            ],
            title="Self-test",
        )
        failed = [r.name for r in results if not r.passed]
        if failed:
            ui.warn(f"{len(failed)} check(s) failed: {', '.join(failed)}")
            raise typer.Exit(code=1)
        ui.success(f"All {len(results)} checks passed")

    return {"selftest": selftest}
