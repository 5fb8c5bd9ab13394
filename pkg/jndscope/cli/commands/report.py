"""Emit report artifacts from an evaluation."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from jndscope import ui
from jndscope.manifest import write_manifest
from jndscope.report import emit_report, read_report

from ..common import COMMAND_CONTEXT, config_option, handle_errors, resolve_config, run_directory
from ..type_defs import CommandMap
from .evaluate import EVAL_DIR, print_summary

REPORT_DIR = "report"


def register(app: typer.Typer) -> CommandMap:
    @app.command(context_settings=COMMAND_CONTEXT)
    @handle_errors
    def report(
        eval_path: Optional[Path] = typer.Option(
            None, "--eval", "-e", help="Evaluation report.json or its directory (default: <run>/eval).",
            exists=True,
        ),
        out: Optional[Path] = typer.Option(
            None, "--out", "-o", help="Output directory (default: <run>/report).", file_okay=False
        ),
        config: Optional[Path] = config_option(),
    ) -> None:
        """Write report.json, report.csv, the error histogram and the PSNR scatter plot."""
        cfg = resolve_config(config)
        run = run_directory(cfg)
        source = eval_path or run / EVAL_DIR
        evaluation = read_report(source)
        out_dir = out or run / REPORT_DIR
        paths = emit_report(evaluation, out_dir)
        write_manifest(run, "report", config=cfg.to_dict(), seeds={}, inputs=paths)
        print_summary(evaluation)
        for path in paths:
            ui.info(str(path))
        ui.success(f"Report written to {out_dir}")

    return {"report": report}
