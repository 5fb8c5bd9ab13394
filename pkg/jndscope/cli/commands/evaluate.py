"""Score prediction directories against the dataset targets."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional

import typer

from jndscope import ui
from jndscope.core import JNDResult
from jndscope.errors import EmptyInput
from jndscope.evaluation import EvalReport, evaluate_predictions
from jndscope.ingest import INDEX_FILE, DatasetIndex
from jndscope.manifest import write_manifest
from jndscope.report import REPORT_JSON

from ..common import COMMAND_CONTEXT, config_option, handle_errors, resolve_config, run_directory
from ..type_defs import CommandMap
from .prepare import DATA_DIR

EVAL_DIR = "eval"


def register(app: typer.Typer) -> CommandMap:
    @app.command(context_settings=COMMAND_CONTEXT)
    @handle_errors
    def evaluate(
        pred_dirs: List[Path] = typer.Option(
            ..., "--pred-dir", "-p", help="Prediction directory; repeat once per fold.",
            exists=True, file_okay=False,
        ),
        config: Optional[Path] = config_option(),
        index: Optional[Path] = typer.Option(
            None, "--index", help="Dataset index (default: <run>/data/index.json).", dir_okay=False
        ),
        out: Optional[Path] = typer.Option(
            None, "--out", "-o", help="Output directory (default: <run>/eval).", file_okay=False
        ),
        luma_only: Optional[bool] = typer.Option(
            None, "--luma-only/--all-channels", help="PSNR on BT.601 luma only."
        ),
    ) -> None:
        """Compute the evaluation report; several --pred-dir values are treated as folds."""
        cfg = resolve_config(config, [("eval.luma_only", luma_only)])
        run = run_directory(cfg)
        index_path = index or run / DATA_DIR / INDEX_FILE
        dataset = DatasetIndex.load(index_path)
        results: List[JNDResult] = []
        folds: Optional[Dict[str, int]] = {} if len(pred_dirs) > 1 else None
        for position, directory in enumerate(pred_dirs):
            files = sorted(directory.glob("*.json"))
            if not files:
                raise EmptyInput(f"no prediction files in {directory}")
            for path in files:
                result = JNDResult.read(path)
                results.append(result)
                if folds is not None and result.image_id is not None:
                    folds[result.image_id] = position
        report = evaluate_predictions(
            results, dataset, luma_only=cfg.eval.luma_only, folds=folds
        )
        out_dir = out or run / EVAL_DIR
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / REPORT_JSON
        report_path.write_text(report.to_json(), encoding="utf-8")
        write_manifest(
            run,
            "evaluate",
            config=cfg.to_dict(),
            seeds={},
            inputs=[index_path, *pred_dirs, report_path],
        )
        print_summary(report)
        ui.success(f"Evaluation written to {report_path}")

    return {"evaluate": evaluate}


def _fmt(value: Optional[float], digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def print_summary(report: EvalReport) -> None:
    rows = [
        ("images", len(report.per_image)),
        ("without JND", report.none_count),
        ("ΔJND (levels)", _fmt(report.delta_jnd)),
        ("ΔPSNR (dB)", _fmt(report.delta_psnr)),
        ("PLCC", _fmt(report.plcc)),
        ("|err| < 5", _fmt(report.within_5, 3)),
        ("|err| < 10", _fmt(report.within_10, 3)),
        ("max |err|", report.max_abs_err if report.max_abs_err is not None else "n/a"),
    ]
    if report.folds:
        rows += [
            ("CV ΔJND", _fmt(report.cv_delta_jnd)),
            ("CV ΔPSNR", _fmt(report.cv_delta_psnr)),
        ]
    ui.print_table(("metric", "value"), rows, title="Evaluation")
