"""Dataset indexing, synthetic dataset generation and JND target derivation."""

from __future__ import annotations

import csv
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from jndscope import gev
from jndscope.core import (
    LADDER_MANIFEST,
    REFERENCE_FILE,
    CodecId,
    CodecSpec,
    CompressionLadder,
    EncodeFn,
    ImageBuffer,
    LadderIntegrityError,
    ProgressCallback,
    build_ladder,
    decoded_only_codec,
    load_ladder,
    read_ladder_manifest,
    verify_ladder_files,
)
from jndscope.errors import JndscopeError
from jndscope.evaluation import psnr

INDEX_FILE = "index.json"
IMAGE_SUFFIXES = (".png", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff", ".ppm", ".pgm")
MAX_REPORTED_PATHS = 10
THRESHOLD_HEADROOM_DB = 0.5
_LEVEL_PATTERN = re.compile(r"_(\d+)$")

PathLike = Union[str, Path]


class LayoutError(JndscopeError):
    """The dataset root does not match the declared layout."""

    def __init__(self, message: str, paths: Sequence[Union[str, Path]] = ()):
        self.paths = [str(p) for p in paths]
        shown = self.paths[:MAX_REPORTED_PATHS]
        detail = f": {', '.join(shown)}" if shown else ""
        more = len(self.paths) - len(shown)
        suffix = f" (+{more} more)" if more > 0 else ""
        super().__init__(f"{message}{detail}{suffix}")


class DatasetLayout(str, Enum):
    LADDER_DIR = "LADDER_DIR"
    MCL_JCI = "MCL_JCI"
    KONJND_1K = "KONJND_1K"


class Texture(str, Enum):
    GRADIENT = "GRADIENT"
    TEXTURE = "TEXTURE"
    TEXT = "TEXT"
    FLAT = "FLAT"


TEXTURE_CYCLE = (Texture.GRADIENT, Texture.TEXTURE, Texture.TEXT, Texture.FLAT)


class CodecRecipe(BaseModel):
    codec_id: CodecId = CodecId.JPEG
    level_range: Tuple[int, int] = (1, 100)

    model_config = ConfigDict(frozen=True)

    @classmethod
    def from_spec(cls, spec: CodecSpec) -> "CodecRecipe":
        return cls(codec_id=spec.codec_id, level_range=spec.level_range)

    def to_spec(self, encode: Optional[EncodeFn] = None) -> CodecSpec:
        if encode is None and self.codec_id is CodecId.GENERIC:
            return decoded_only_codec(self.model_dump(mode="json"))
        return CodecSpec(codec_id=self.codec_id, level_range=self.level_range, encode=encode)


class DatasetRecord(BaseModel):
    image_id: str
    source_path: Optional[str] = None
    ladder_path: Optional[str] = None
    codec: CodecRecipe = Field(default_factory=CodecRecipe)
    jnd_samples: List[int] = Field(default_factory=list)
    jnd_target: Optional[int] = None
    oracle_threshold_db: Optional[float] = None
    texture: Optional[Texture] = None

    @model_validator(mode="after")
    def validate_target(self) -> "DatasetRecord":
        if not self.jnd_samples and self.jnd_target is None:
            raise ValueError(
                f"record {self.image_id!r} needs jnd_samples or an explicit jnd_target"
            )
        lo, hi = self.codec.level_range
        if self.jnd_target is not None and not lo <= self.jnd_target <= hi:
            raise ValueError(
                f"record {self.image_id!r}: jnd_target {self.jnd_target} outside [{lo}, {hi}]"
            )
        return self


class DatasetIndex(BaseModel):
    """Records of one dataset; paths are relative to ``root`` (not serialized)."""

    layout: DatasetLayout = DatasetLayout.LADDER_DIR
    records: List[DatasetRecord] = Field(default_factory=list)
    _root: Optional[Path] = PrivateAttr(default=None)

    @field_validator("records")
    @classmethod
    def unique_ids(cls, records: List[DatasetRecord]) -> List[DatasetRecord]:
        counts = Counter(record.image_id for record in records)
        duplicates = sorted(image_id for image_id, n in counts.items() if n > 1)
        if duplicates:
            raise ValueError(f"duplicate image_ids: {', '.join(duplicates[:10])}")
        return records

    @property
    def root(self) -> Optional[Path]:
        return self._root

    def with_root(self, root: PathLike) -> "DatasetIndex":
        self._root = Path(root)
        return self

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> List[str]:
        return [record.image_id for record in self.records]

    def get(self, image_id: str) -> DatasetRecord:
        for record in self.records:
            if record.image_id == image_id:
                return record
        raise KeyError(image_id)

    def subset(self, image_ids: Iterable[str]) -> "DatasetIndex":
        wanted = set(image_ids)
        subset = DatasetIndex(
            layout=self.layout,
            records=[r for r in self.records if r.image_id in wanted],
        )
        subset._root = self._root
        return subset

    def resolve(self, relative: str) -> Path:
        base = self._root or Path(".")
        return base / relative

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"

    def save(self, path: Optional[PathLike] = None) -> Path:
        target = Path(path) if path is not None else self.resolve(INDEX_FILE)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.to_json(), encoding="utf-8")
        return target

    @classmethod
    def load(cls, path: PathLike) -> "DatasetIndex":
        path = Path(path)
        if path.is_dir():
            path = path / INDEX_FILE
        try:
            index = cls.model_validate_json(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise LayoutError("dataset index not found", [path]) from exc
        except ValueError as exc:
            raise LayoutError(f"invalid dataset index ({exc})", [path]) from exc
        return index.with_root(path.parent)


def load_dataset(
    root: PathLike,
    layout: Union[DatasetLayout, str],
    *,
    codec: Optional[CodecSpec] = None,
) -> DatasetIndex:
    """Index ``root`` according to ``layout``; every nonconforming path is reported."""
    root = Path(root)
    layout = DatasetLayout(layout)
    if not root.is_dir():
        raise LayoutError("dataset root does not exist", [root])
    loader = {
        DatasetLayout.LADDER_DIR: _load_ladder_dir,
        DatasetLayout.MCL_JCI: _load_mcl_jci,
        DatasetLayout.KONJND_1K: _load_konjnd,
    }[layout]
    records = loader(root, codec or CodecSpec())
    return DatasetIndex(layout=layout, records=records).with_root(root)


def _load_ladder_dir(root: Path, codec: CodecSpec) -> List[DatasetRecord]:
    manifests = sorted(root.glob(f"*/{LADDER_MANIFEST}"))
    if not manifests:
        raise LayoutError(f"no */{LADDER_MANIFEST} found", [root])
    records: List[DatasetRecord] = []
    problems: List[str] = []
    for manifest_path in manifests:
        directory = manifest_path.parent
        try:
            manifest = read_ladder_manifest(directory)
            verify_ladder_files(directory, manifest)
        except LadderIntegrityError as exc:
            problems.append(f"{exc.path} ({exc.detail})")
            continue
        relative = directory.relative_to(root).as_posix()
        try:
            records.append(
                DatasetRecord(
                    image_id=manifest.get("image_id", directory.name),
                    source_path=f"{relative}/{REFERENCE_FILE}",
                    ladder_path=relative,
                    codec=CodecRecipe(
                        codec_id=manifest.get("codec_id", "JPEG"),
                        level_range=tuple(manifest.get("level_range", (1, 100))),
                    ),
                    jnd_samples=manifest.get("jnd_samples", []),
                    jnd_target=manifest.get("jnd_target"),
                    oracle_threshold_db=manifest.get("oracle_threshold_db"),
                    texture=manifest.get("texture"),
                )
            )
        except ValueError:
            problems.append(f"{manifest_path} (no JND annotation)")
    if problems:
        raise LayoutError("nonconforming ladders", problems)
    return records


def _read_annotations(path: Path) -> Dict[str, Dict[str, str]]:
    if not path.exists():
        raise LayoutError("annotation file missing", [path])
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if not reader.fieldnames or "image_id" not in reader.fieldnames:
            raise LayoutError("annotation file needs an image_id column", [path])
        return {row["image_id"].strip(): row for row in reader if row.get("image_id")}


def _annotation_fields(row: Dict[str, str]) -> Dict[str, Any]:
    """Accept per-subject sample lists and/or an aggregated ``jnd`` column."""
    samples_text = (row.get("samples") or "").strip()
    jnd_text = (row.get("jnd") or "").strip()
    fields: Dict[str, Any] = {}
    if samples_text:
        fields["jnd_samples"] = [int(round(float(v))) for v in re.split(r"[\s;]+", samples_text) if v]
    if jnd_text:
        fields["jnd_target"] = int(round(float(jnd_text)))
    return fields


def _images_by_stem(directory: Path) -> Dict[str, Path]:
    return {
        path.stem: path
        for path in sorted(directory.iterdir())
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES
    }


def _load_mcl_jci(root: Path, codec: CodecSpec) -> List[DatasetRecord]:
    references = root / "references"
    if not references.is_dir():
        raise LayoutError("missing references/ directory", [references])
    sources = _images_by_stem(references)
    if not sources:
        raise LayoutError("no reference images", [references])
    annotations = _read_annotations(root / "jnd.csv")
    records: List[DatasetRecord] = []
    problems: List[str] = []
    for image_id, source in sources.items():
        distorted_dir = root / "distorted" / image_id
        levels = _distorted_levels(distorted_dir) if distorted_dir.is_dir() else {}
        missing = [level for level in codec.levels if level not in levels]
        if missing:
            problems.extend(f"{distorted_dir}/*_{level}" for level in missing)
            continue
        row = annotations.get(image_id)
        if row is None:
            problems.append(f"{root / 'jnd.csv'}: no row for {image_id}")
            continue
        try:
            records.append(
                DatasetRecord(
                    image_id=image_id,
                    source_path=source.relative_to(root).as_posix(),
                    ladder_path=distorted_dir.relative_to(root).as_posix(),
                    codec=CodecRecipe.from_spec(codec),
                    **_annotation_fields(row),
                )
            )
        except ValueError as exc:
            problems.append(f"{root / 'jnd.csv'}: {image_id} ({exc})")
    if problems:
        raise LayoutError("nonconforming MCL-JCI entries", problems)
    return records


def _distorted_levels(directory: Path) -> Dict[int, Path]:
    levels: Dict[int, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        match = _LEVEL_PATTERN.search(path.stem)
        if match:
            levels[int(match.group(1))] = path
    return levels


def _load_konjnd(root: Path, codec: CodecSpec) -> List[DatasetRecord]:
    images = root / "images"
    if not images.is_dir():
        raise LayoutError("missing images/ directory", [images])
    sources = _images_by_stem(images)
    if not sources:
        raise LayoutError("no source images", [images])
    annotations = _read_annotations(root / "annotations.csv")
    records: List[DatasetRecord] = []
    problems: List[str] = []
    for image_id, source in sources.items():
        row = annotations.get(image_id)
        if row is None:
            problems.append(f"{root / 'annotations.csv'}: no row for {image_id}")
            continue
        codec_name = (row.get("codec") or codec.codec_id.value).strip().upper()
        if codec_name not in (CodecId.JPEG.value,):
            # BPG rows need an injected GENERIC encoder, which a CSV cannot carry.
            problems.append(f"{source} (codec {codec_name} has no shipped adapter)")
            continue
        try:
            records.append(
                DatasetRecord(
                    image_id=image_id,
                    source_path=source.relative_to(root).as_posix(),
                    codec=CodecRecipe(codec_id=CodecId.JPEG, level_range=codec.level_range),
                    **_annotation_fields(row),
                )
            )
        except ValueError as exc:
            problems.append(f"{root / 'annotations.csv'}: {image_id} ({exc})")
    if problems:
        raise LayoutError("nonconforming KonJND-1k entries", problems)
    return records


def materialize_ladder(
    index: DatasetIndex,
    record: DatasetRecord,
    *,
    encode: Optional[EncodeFn] = None,
    verify: bool = True,
) -> CompressionLadder:
    """Load or build the compression ladder a record points at."""
    if index.layout is DatasetLayout.LADDER_DIR:
        return load_ladder(index.resolve(record.ladder_path or record.image_id), verify=verify, encode=encode)
    if record.source_path is None:
        raise LayoutError(f"record {record.image_id} has no source image")
    source = ImageBuffer.read(index.resolve(record.source_path))
    codec = record.codec.to_spec(encode)
    if index.layout is DatasetLayout.MCL_JCI and record.ladder_path:
        levels = _distorted_levels(index.resolve(record.ladder_path))
        rungs = {level: ImageBuffer.read(levels[level]) for level in codec.levels}
        return CompressionLadder(source=source, codec=codec, rungs=rungs)
    return build_ladder(source, codec)


def resolve_targets(
    index: DatasetIndex,
    *,
    quantile: float = 0.5,
    min_samples: int = 5,
) -> Tuple[DatasetIndex, List[Dict[str, Any]]]:
    """Fill ``jnd_target`` from GEV fits of ``jnd_samples`` where it is unset.

    Returns the updated index and one row per fitted record for ``gev_fits.csv``.
    Records whose samples are constant take that constant as target.
    """
    rows: List[Dict[str, Any]] = []
    records: List[DatasetRecord] = []
    for record in index.records:
        if record.jnd_target is not None or not record.jnd_samples:
            records.append(record)
            continue
        row: Dict[str, Any] = {"image_id": record.image_id}
        try:
            params = gev.fit_gev(record.jnd_samples, min_n=min_samples)
        except gev.DegenerateSamples:
            target = int(record.jnd_samples[0])
        else:
            target = gev.gev_target(params, quantile, record.codec.level_range)
            row.update(mu=params.mu, sigma=params.sigma, xi=params.xi)
        row["target"] = target
        rows.append(row)
        records.append(record.model_copy(update={"jnd_target": target}))
    updated = DatasetIndex(layout=index.layout, records=records)
    updated._root = index.root
    return updated, rows


def prepare_ladders(
    index: DatasetIndex,
    out_dir: PathLike,
    *,
    workers: int = 1,
    progress_callback: Optional[ProgressCallback] = None,
) -> DatasetIndex:
    """Write every record's ladder under ``out_dir`` and return a LADDER_DIR index."""
    out_dir = Path(out_dir)
    total = len(index.records)

    def _one(position: int, record: DatasetRecord) -> DatasetRecord:
        if progress_callback:
            progress_callback("start", position, total, record.image_id)
        if record.jnd_target is None:
            raise LayoutError(f"record {record.image_id} has no resolved jnd_target")
        ladder = materialize_ladder(index, record)
        ladder.save(out_dir / record.image_id, record.image_id, annotations=_annotations(record))
        if progress_callback:
            progress_callback("end", position, total, record.image_id)
        return record.model_copy(
            update={
                "source_path": f"{record.image_id}/{REFERENCE_FILE}",
                "ladder_path": record.image_id,
            }
        )

    records = _map_ordered(_one, index.records, workers)
    prepared = DatasetIndex(layout=DatasetLayout.LADDER_DIR, records=records).with_root(out_dir)
    prepared.save()
    return prepared


def _annotations(record: DatasetRecord) -> Dict[str, Any]:
    return {
        "jnd_samples": list(record.jnd_samples),
        "jnd_target": record.jnd_target,
        "oracle_threshold_db": record.oracle_threshold_db,
        "texture": record.texture.value if record.texture else None,
    }


def _map_ordered(fn, items: Sequence[Any], workers: int) -> List[Any]:
    """Apply ``fn(position, item)``; output order matches input order for any worker count."""
    indexed = list(enumerate(items, start=1))
    if workers <= 1 or len(indexed) <= 1:
        return [fn(position, item) for position, item in indexed]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(fn, position, item) for position, item in indexed]
        return [future.result() for future in futures]


# Synthetic dataset -----------------------------------------------------------


def render_texture(texture: Texture, size: int, rng: np.random.Generator) -> np.ndarray:
    """Procedural RGB content for one texture class as a float array in [0, 255]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / max(size - 1, 1)
    if texture is Texture.GRADIENT:
        angle = rng.uniform(0.0, 2.0 * np.pi)
        ramp = np.cos(angle) * xx + np.sin(angle) * yy
        ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-9)
        start, end = rng.uniform(0.0, 255.0, size=(2, 3))
        image = start + (end - start) * ramp[..., None]
        image += rng.normal(0.0, 2.0, size=image.shape)
    elif texture is Texture.TEXTURE:
        image = np.full((size, size, 3), 128.0)
        for _ in range(4):
            fx, fy = rng.uniform(2.0, size / 4.0, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amplitude = rng.uniform(10.0, 30.0, size=3)
            wave = np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
            image += amplitude * wave[..., None]
        image += rng.normal(0.0, 12.0, size=image.shape)
    elif texture is Texture.TEXT:
        paper = rng.uniform(200.0, 245.0)
        ink = rng.uniform(10.0, 60.0, size=3)
        image = np.full((size, size, 3), paper)
        line_height = int(rng.integers(8, 13))
        for top in range(2, size - line_height + 1, line_height):
            x = 2
            while x < size - 6:
                width = int(rng.integers(3, 7))
                glyph = rng.random((line_height - 3, width)) < 0.45
                glyph[:, 0] |= rng.random() < 0.5
                image[top : top + line_height - 3, x : x + width][glyph] = ink
                x += width + int(rng.integers(1, 4))
        image += rng.normal(0.0, 1.5, size=image.shape)
    else:
        image = np.empty((size, size, 3))
        cut_x, cut_y = (int(v) for v in rng.integers(size // 4, 3 * size // 4, size=2))
        colors = rng.uniform(20.0, 235.0, size=(4, 3))
        image[:cut_y, :cut_x] = colors[0]
        image[:cut_y, cut_x:] = colors[1]
        image[cut_y:, :cut_x] = colors[2]
        image[cut_y:, cut_x:] = colors[3]
        image += rng.normal(0.0, 1.0, size=image.shape)
    return image


def rung_psnrs(ladder: CompressionLadder, *, luma_only: bool = False) -> Dict[int, float]:
    return {level: psnr(ladder.source, rung, luma_only=luma_only) for level, rung in ladder}


def oracle_target(ladder: CompressionLadder, threshold_db: float) -> Optional[int]:
    """Smallest level whose PSNR against the source exceeds ``threshold_db``."""
    for level, value in rung_psnrs(ladder).items():
        if value > threshold_db:
            return level
    return None


def generate_synthetic(
    seed: int,
    count: int,
    size: int,
    root: PathLike,
    *,
    workers: int = 1,
    codec: Optional[CodecSpec] = None,
    threshold_db: Tuple[float, float] = (30.0, 42.0),
    progress_callback: Optional[ProgressCallback] = None,
) -> DatasetIndex:
    """Write ``count`` procedural ladders with PSNR-threshold oracle targets under ``root``.

    Texture classes rotate GRADIENT, TEXTURE, TEXT, FLAT. Each image draws a
    threshold from ``threshold_db`` (capped just below the PSNR of the best
    rung) and its target is the first level whose PSNR exceeds it.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if size < 32:
        raise ValueError("size must be >= 32")
    codec = codec or CodecSpec()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    low, high = threshold_db

    def _one(position: int, i: int) -> DatasetRecord:
        image_id = f"syn{i:04d}"
        if progress_callback:
            progress_callback("start", position, count, image_id)
        rng = np.random.default_rng([seed, i])
        texture = TEXTURE_CYCLE[i % len(TEXTURE_CYCLE)]
        pixels = np.clip(np.rint(render_texture(texture, size, rng)), 0, 255).astype(np.uint8)
        ladder = build_ladder(ImageBuffer(pixels), codec)
        best = psnr(ladder.source, ladder.rung(codec.level_range[1]))
        threshold = min(float(rng.uniform(low, high)), best - THRESHOLD_HEADROOM_DB)
        target = oracle_target(ladder, threshold)
        if target is None:  # pragma: no cover - guarded by the headroom cap
            raise JndscopeError(f"{image_id}: no level exceeds {threshold:.3f} dB")
        record = DatasetRecord(
            image_id=image_id,
            source_path=f"{image_id}/{REFERENCE_FILE}",
            ladder_path=image_id,
            codec=CodecRecipe.from_spec(codec),
            jnd_target=target,
            oracle_threshold_db=threshold,
            texture=texture,
        )
        ladder.save(root / image_id, image_id, annotations=_annotations(record))
        if progress_callback:
            progress_callback("end", position, count, image_id)
        return record

    records = _map_ordered(_one, list(range(count)), workers)
    index = DatasetIndex(layout=DatasetLayout.LADDER_DIR, records=records).with_root(root)
    index.save()
    return index
