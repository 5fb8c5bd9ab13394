"""Report artifacts: JSON, CSV, absolute-error histogram and PSNR scatter."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import List, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from jndscope.errors import EmptyInput, JndscopeError  # noqa: E402
from jndscope.evaluation import EvalReport, histogram_counts  # noqa: E402
from jndscope.logging import PALETTE  # noqa: E402

REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
HISTOGRAM_PNG = "abs_error_hist.png"
SCATTER_PNG = "psnr_scatter.png"
CSV_COLUMNS = ("image_id", "jnd_pred", "jnd_gt", "abs_err", "psnr_pred_db", "psnr_gt_db")
# Without a Software key the PNG bytes do not depend on the matplotlib version string.
PNG_METADATA = {"Software": None}


class ReportWriteError(JndscopeError):
    """A report artifact could not be written."""


def emit_report(report: EvalReport, out_dir: Union[str, Path]) -> List[Path]:
    if not report.per_image:
        raise EmptyInput("cannot emit an empty report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [
            _write_json(report, out_dir / REPORT_JSON),
            _write_csv(report, out_dir / REPORT_CSV),
            _plot_histogram(report, out_dir / HISTOGRAM_PNG),
            _plot_scatter(report, out_dir / SCATTER_PNG),
        ]
    except OSError as exc:
        raise ReportWriteError(f"failed to write report to {out_dir}: {exc}") from exc
    return paths


def read_report(path: Union[str, Path]) -> EvalReport:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_JSON
    return EvalReport.from_json(path.read_text(encoding="utf-8"))


def _write_json(report: EvalReport, path: Path) -> Path:
    path.write_text(report.to_json(), encoding="utf-8")
    return path


def _cell(value: object) -> str:
    if value is None:
        return "NONE"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _write_csv(report: EvalReport, path: Path) -> Path:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in report.per_image:
            writer.writerow([_cell(getattr(row, column)) for column in CSV_COLUMNS])
    return path


def _plot_histogram(report: EvalReport, path: Path) -> Path:
    counts = histogram_counts(report)
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    try:
        ax.bar(
            list(counts.keys()),
            list(counts.values()),
            width=0.8,
            color=PALETTE["blue"],
            edgecolor=PALETTE["bg"],
        )
        ax.set_xlabel("absolute JND error (levels)")
        ax.set_ylabel("images")
        title = "Absolute error histogram"
        if report.none_count:
            title += f" ({report.none_count} without JND)"
        ax.set_title(title)
        ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=PNG_METADATA)
    finally:
        plt.close(fig)
    return path


def _plot_scatter(report: EvalReport, path: Path) -> Path:
    rows = report.scored
    gt = [row.psnr_gt_db for row in rows]
    pred = [row.psnr_pred_db for row in rows]
    fig, ax = plt.subplots(figsize=(5, 5), dpi=100)
    try:
        ax.scatter(gt, pred, s=18, color=PALETTE["orange"])
        if gt:
            lo = min(min(gt), min(pred)) - 1.0
            hi = max(max(gt), max(pred)) + 1.0
            ax.plot([lo, hi], [lo, hi], linestyle="--", color=PALETTE["fg_muted"], linewidth=1)
            ax.set_xlim(lo, hi)
            ax.set_ylim(lo, hi)
        label = "n/a" if report.plcc is None else f"{report.plcc:.4f}"
        ax.set_title(f"PSNR at JND (PLCC = {label})")
        ax.set_xlabel("ground truth PSNR (dB)")
        ax.set_ylabel("predicted PSNR (dB)")
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=PNG_METADATA)
    finally:
        plt.close(fig)
    return path
