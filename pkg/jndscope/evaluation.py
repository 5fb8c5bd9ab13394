"""Image metrics and evaluation reports for predicted JND levels."""

from __future__ import annotations

import math
from collections import Counter
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator
from scipy import stats

from jndscope.core import CompressionLadder, ImageBuffer, JNDResult, MissingRung
from jndscope.errors import EmptyInput, JndscopeError, LengthMismatch, ShapeMismatch

if TYPE_CHECKING:
    from jndscope.ingest import DatasetIndex

REPORT_SCHEMA = 1
MAX_PSNR_DB = 99.0
PEAK = 255.0
BT601 = np.array([0.299, 0.587, 0.114])
AGGREGATE_TOLERANCE = 1e-9

__all__ = [
    "DegenerateVariance",
    "EvalReport",
    "FoldSummary",
    "ImageRow",
    "MissingRung",
    "build_report",
    "delta_jnd",
    "delta_psnr",
    "evaluate_predictions",
    "histogram_counts",
    "plcc",
    "psnr",
]


class DegenerateVariance(JndscopeError, ValueError):
    """Correlation is undefined because one argument has no spread."""


def _luma(pixels: np.ndarray) -> np.ndarray:
    if pixels.shape[2] == 1:
        return pixels[:, :, 0]
    return pixels @ BT601


def psnr(ref: ImageBuffer, dist: ImageBuffer, *, luma_only: bool = False) -> float:
    """Peak signal-to-noise ratio in dB over all samples, capped at 99 dB."""
    if ref.shape != dist.shape:
        raise ShapeMismatch(f"psnr needs equal shapes, got {ref.shape} and {dist.shape}")
    a = ref.pixels.astype(np.float64)
    b = dist.pixels.astype(np.float64)
    if luma_only:
        a, b = _luma(a), _luma(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return MAX_PSNR_DB
    return min(MAX_PSNR_DB, 10.0 * math.log10(PEAK * PEAK / mse))


def _paired(pred: Sequence[float], gt: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(gt)} ground-truth values")
    if not len(pred):
        raise EmptyInput("metrics need at least one pair")
    return np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)


def delta_jnd(pred: Sequence[int], gt: Sequence[int]) -> float:
    """Mean absolute JND error in levels."""
    p, g = _paired(pred, gt)
    return float(np.mean(np.abs(p - g)))


def delta_psnr(
    ladders: Sequence[CompressionLadder],
    pred: Sequence[int],
    gt: Sequence[int],
    *,
    luma_only: bool = False,
) -> float:
    """Mean absolute PSNR gap (dB) between the rungs at predicted and true JND."""
    _paired(pred, gt)
    if len(ladders) != len(pred):
        raise LengthMismatch(f"{len(ladders)} ladders vs {len(pred)} predictions")
    gaps = [
        abs(
            psnr(ladder.source, ladder.rung(p), luma_only=luma_only)
            - psnr(ladder.source, ladder.rung(g), luma_only=luma_only)
        )
        for ladder, p, g in zip(ladders, pred, gt)
    ]
    return float(np.mean(gaps))


def plcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson linear correlation coefficient."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.size != b.size:
        raise LengthMismatch(f"{a.size} vs {b.size} values")
    if a.size < 2:
        raise DegenerateVariance("correlation needs at least two points")
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        raise DegenerateVariance("one of the inputs is constant")
    coefficient, _ = stats.pearsonr(a, b)
    return float(coefficient)


class ImageRow(BaseModel):
    image_id: str
    jnd_pred: Optional[int] = None
    jnd_gt: int
    psnr_pred_db: Optional[float] = None
    psnr_gt_db: float
    fold: Optional[int] = None

    @computed_field  # type: ignore[prop-decorator]
    @property
    def abs_err(self) -> Optional[int]:
        if self.jnd_pred is None:
            return None
        return abs(self.jnd_pred - self.jnd_gt)


class FoldSummary(BaseModel):
    fold: int
    count: int
    delta_jnd: Optional[float] = None
    delta_psnr: Optional[float] = None


class EvalReport(BaseModel):
    """Per-image rows plus aggregates; rows with no predicted JND are counted, not scored."""

    schema_version: int = Field(default=REPORT_SCHEMA, alias="schema")
    per_image: List[ImageRow]
    delta_jnd: Optional[float] = None
    delta_psnr: Optional[float] = None
    plcc: Optional[float] = None
    none_count: int = 0
    within_5: Optional[float] = None
    within_10: Optional[float] = None
    max_abs_err: Optional[int] = None
    folds: List[FoldSummary] = Field(default_factory=list)
    cv_delta_jnd: Optional[float] = None
    cv_delta_psnr: Optional[float] = None

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def check_aggregates(self) -> "EvalReport":
        if self.schema_version != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {self.schema_version}")
        expected = _aggregates(self.per_image)
        for name, value in expected.items():
            if not _close(getattr(self, name), value):
                raise ValueError(f"{name} does not match the per-image rows")
        return self

    @property
    def scored(self) -> List[ImageRow]:
        return [row for row in self.per_image if row.jnd_pred is not None]

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.model_validate_json(text)


def _close(actual: object, expected: object) -> bool:
    if actual is None or expected is None:
        return actual is None and expected is None
    return abs(float(actual) - float(expected)) <= AGGREGATE_TOLERANCE  # type: ignore[arg-type]


def _aggregates(rows: Sequence[ImageRow]) -> Dict[str, object]:
    scored = [row for row in rows if row.jnd_pred is not None]
    result: Dict[str, object] = {
        "none_count": len(rows) - len(scored),
        "delta_jnd": None,
        "delta_psnr": None,
        "plcc": None,
        "within_5": None,
        "within_10": None,
        "max_abs_err": None,
    }
    if not scored:
        return result
    errors = [row.abs_err for row in scored]
    pred_db = [row.psnr_pred_db for row in scored]
    gt_db = [row.psnr_gt_db for row in scored]
    result.update(
        delta_jnd=delta_jnd([r.jnd_pred for r in scored], [r.jnd_gt for r in scored]),
        delta_psnr=float(np.mean(np.abs(np.subtract(pred_db, gt_db)))),
        within_5=sum(e < 5 for e in errors) / len(errors),
        within_10=sum(e < 10 for e in errors) / len(errors),
        max_abs_err=max(errors),
    )
    try:
        result["plcc"] = plcc(pred_db, gt_db)
    except DegenerateVariance:
        pass
    return result


def build_report(rows: Iterable[ImageRow]) -> EvalReport:
    """Aggregate rows; with fold labels the cross-validation means are added too."""
    rows = list(rows)
    if not rows:
        raise EmptyInput("a report needs at least one image row")
    folds: List[FoldSummary] = []
    fold_ids = sorted({row.fold for row in rows if row.fold is not None})
    for fold in fold_ids:
        members = [row for row in rows if row.fold == fold]
        aggregates = _aggregates(members)
        folds.append(
            FoldSummary(
                fold=fold,
                count=len(members),
                delta_jnd=aggregates["delta_jnd"],
                delta_psnr=aggregates["delta_psnr"],
            )
        )
    scored_folds = [f for f in folds if f.delta_jnd is not None]
    cv_jnd = float(np.mean([f.delta_jnd for f in scored_folds])) if scored_folds else None
    cv_psnr = float(np.mean([f.delta_psnr for f in scored_folds])) if scored_folds else None
    return EvalReport(
        per_image=rows,
        folds=folds,
        cv_delta_jnd=cv_jnd,
        cv_delta_psnr=cv_psnr,
        **_aggregates(rows),
    )


def evaluate_predictions(
    results: Iterable[JNDResult],
    index: "DatasetIndex",
    *,
    luma_only: bool = False,
    folds: Optional[Mapping[str, int]] = None,
) -> EvalReport:
    """Score predictions against the index's targets using the materialized ladders."""
    from jndscope.ingest import materialize_ladder

    rows: List[ImageRow] = []
    for result in results:
        if result.image_id is None:
            raise JndscopeError("prediction has no image_id")
        try:
            record = index.get(result.image_id)
        except KeyError:
            raise JndscopeError(f"{result.image_id} is not in the dataset index") from None
        ladder = materialize_ladder(index, record)
        gt = record.jnd_target
        if gt is None:
            raise JndscopeError(f"{record.image_id} has no JND target")
        pred = result.jnd_level
        rows.append(
            ImageRow(
                image_id=record.image_id,
                jnd_pred=pred,
                jnd_gt=gt,
                psnr_pred_db=None
                if pred is None
                else psnr(ladder.source, ladder.rung(pred), luma_only=luma_only),
                psnr_gt_db=psnr(ladder.source, ladder.rung(gt), luma_only=luma_only),
                fold=None if folds is None else folds.get(record.image_id),
            )
        )
    rows.sort(key=lambda row: (row.fold if row.fold is not None else -1, row.image_id))
    return build_report(rows)


def histogram_counts(report: EvalReport) -> Dict[int, int]:
    """Absolute-error histogram with one integer-wide bin per error value."""
    return dict(sorted(Counter(row.abs_err for row in report.scored).items()))
