"""Domain types, compression-ladder construction and ground-truth labels."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Dict, Iterator, Mapping, Optional, Tuple, Union

import numpy as np
from PIL import Image

from jndscope import codecs
from jndscope.errors import JndscopeError

LADDER_SCHEMA = 1
LADDER_MANIFEST = "ladder.json"
REFERENCE_FILE = "ref.png"
MIN_LADDER_SIDE = 8

PathLike = Union[str, "os.PathLike[str]"]
# (phase, index, total, payload) with phase in {"start", "end"}
ProgressCallback = Callable[[str, int, int, Any], None]


class CodecFailure(JndscopeError):
    """Encoding or decoding failed at a specific ladder level."""

    def __init__(self, level: int, detail: str = ""):
        self.level = level
        message = f"codec failed at level {level}"
        super().__init__(f"{message}: {detail}" if detail else message)


class DimensionMismatch(JndscopeError, ValueError):
    """A rung does not have the source's geometry, or the source is too small."""


class OutOfRange(JndscopeError, ValueError):
    """A level lies outside the codec's level range."""


class MissingRung(JndscopeError, KeyError):
    """A ladder has no rung for the requested level."""


class IncompleteSequence(JndscopeError, ValueError):
    """A label sequence does not cover every level of its codec range."""


class LadderIntegrityError(JndscopeError):
    """A ladder file on disk does not match the hash recorded in its manifest."""

    def __init__(self, path: Path, detail: str):
        self.path = path
        self.detail = detail
        super().__init__(f"{path}: {detail}")


class CodecId(str, Enum):
    JPEG = "JPEG"
    GENERIC = "GENERIC"


class Orientation(str, Enum):
    HIGHER_LEVEL_IS_BETTER = "HIGHER_LEVEL_IS_BETTER"


class LabelOrigin(str, Enum):
    GROUND_TRUTH = "GROUND_TRUTH"
    PREDICTED = "PREDICTED"


class SearchStrategy(str, Enum):
    NAIVE = "NAIVE"
    WINDOW = "WINDOW"


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Read-only 8-bit image stored as an (H, W, C) array, C in {1, 3}."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        array = np.asarray(self.pixels)
        if array.ndim == 2:
            array = array[:, :, None]
        if array.ndim != 3 or array.shape[2] not in (1, 3):
            raise DimensionMismatch(
                f"image must be HxW, HxWx1 or HxWx3, got shape {array.shape}"
            )
        if array.dtype != np.uint8:
            if not np.issubdtype(array.dtype, np.integer):
                raise ValueError(f"image samples must be integers, got {array.dtype}")
            if array.size and (array.min() < 0 or array.max() > 255):
                raise ValueError("image samples must lie within [0, 255]")
        array = np.ascontiguousarray(array, dtype=np.uint8).copy()
        array.setflags(write=False)
        object.__setattr__(self, "pixels", array)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ImageBuffer":
        return cls(array)

    @classmethod
    def read(cls, path: PathLike) -> "ImageBuffer":
        with Image.open(path) as image:
            channels = 1 if image.mode in ("L", "I;16", "1") else 3
            return cls(codecs.from_pil(image, channels))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the samples."""
        return self.pixels.reshape(-1)

    def crop(self, x: int, y: int, size: int) -> "ImageBuffer":
        if x < 0 or y < 0 or x + size > self.width or y + size > self.height:
            raise DimensionMismatch(
                f"crop ({x}, {y}, {size}) exceeds {self.width}x{self.height}"
            )
        return ImageBuffer(self.pixels[y : y + size, x : x + size, :])

    def png_bytes(self) -> bytes:
        return codecs.png_bytes(self.pixels)

    def write_png(self, path: PathLike) -> str:
        """Write the image as PNG and return the SHA-256 of the written bytes."""
        payload = self.png_bytes()
        Path(path).write_bytes(payload)
        return hashlib.sha256(payload).hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self) -> int:
        return hash((self.shape, hashlib.sha1(self.pixels.tobytes()).hexdigest()))


EncodeFn = Callable[[ImageBuffer, int], ImageBuffer]


@dataclass(frozen=True)
class CodecSpec:
    codec_id: CodecId = CodecId.JPEG
    level_range: Tuple[int, int] = (1, 100)
    orientation: Orientation = Orientation.HIGHER_LEVEL_IS_BETTER
    encode: Optional[EncodeFn] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "codec_id", CodecId(self.codec_id))
        object.__setattr__(self, "orientation", Orientation(self.orientation))
        lo, hi = (int(v) for v in self.level_range)
        object.__setattr__(self, "level_range", (lo, hi))
        if lo > hi:
            raise ValueError(f"level_range must be non-empty, got [{lo}, {hi}]")
        if self.codec_id is CodecId.GENERIC and self.encode is None:
            raise ValueError("GENERIC codecs require an injected encode function")

    @property
    def levels(self) -> range:
        lo, hi = self.level_range
        return range(lo, hi + 1)

    @property
    def size(self) -> int:
        return self.level_range[1] - self.level_range[0] + 1

    def contains(self, level: int) -> bool:
        lo, hi = self.level_range
        return lo <= level <= hi

    def roundtrip(self, source: ImageBuffer, level: int) -> ImageBuffer:
        if self.encode is not None:
            return self.encode(source, level)
        return ImageBuffer(codecs.jpeg_roundtrip(source.pixels, level))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "codec_id": self.codec_id.value,
            "level_range": list(self.level_range),
            "orientation": self.orientation.value,
        }

    @classmethod
    def from_dict(
        cls, data: Mapping[str, Any], *, encode: Optional[EncodeFn] = None
    ) -> "CodecSpec":
        return cls(
            codec_id=CodecId(data.get("codec_id", "JPEG")),
            level_range=tuple(data.get("level_range", (1, 100))),  # type: ignore[arg-type]
            orientation=Orientation(
                data.get("orientation", Orientation.HIGHER_LEVEL_IS_BETTER.value)
            ),
            encode=encode,
        )


@dataclass(frozen=True, eq=False)
class CompressionLadder:
    source: ImageBuffer
    codec: CodecSpec
    rungs: Mapping[int, ImageBuffer]

    def __post_init__(self) -> None:
        rungs = {int(level): rung for level, rung in sorted(self.rungs.items())}
        expected = list(self.codec.levels)
        if list(rungs) != expected:
            missing = sorted(set(expected) - set(rungs))
            extra = sorted(set(rungs) - set(expected))
            raise MissingRung(
                f"ladder rungs must cover {self.codec.level_range}; "
                f"missing={missing[:10]} unexpected={extra[:10]}"
            )
        for level, rung in rungs.items():
            if rung.shape != self.source.shape:
                raise DimensionMismatch(
                    f"rung {level} has shape {rung.shape}, source is {self.source.shape}"
                )
        object.__setattr__(self, "rungs", MappingProxyType(rungs))

    def rung(self, level: int) -> ImageBuffer:
        try:
            return self.rungs[level]
        except KeyError:
            raise MissingRung(f"ladder has no rung at level {level}") from None

    def __iter__(self) -> Iterator[Tuple[int, ImageBuffer]]:
        return iter(self.rungs.items())

    def __len__(self) -> int:
        return len(self.rungs)

    def save(
        self,
        directory: PathLike,
        image_id: str,
        *,
        annotations: Optional[Mapping[str, Any]] = None,
    ) -> Path:
        """Write ``ref.png``, ``q<level>.png`` and the ``ladder.json`` manifest."""
        target = Path(directory)
        target.mkdir(parents=True, exist_ok=True)
        files = {REFERENCE_FILE: self.source.write_png(target / REFERENCE_FILE)}
        for level, rung in self.rungs.items():
            name = rung_filename(level)
            files[name] = rung.write_png(target / name)
        manifest: Dict[str, Any] = {
            "schema": LADDER_SCHEMA,
            "image_id": image_id,
            **self.codec.to_dict(),
            "files": files,
        }
        if annotations:
            manifest.update(
                {key: value for key, value in annotations.items() if value is not None}
            )
        path = target / LADDER_MANIFEST
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
        return path


def rung_filename(level: int) -> str:
    return f"q{level:03d}.png"


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def read_ladder_manifest(directory: PathLike) -> Dict[str, Any]:
    path = Path(directory) / LADDER_MANIFEST
    try:
        return json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise LadderIntegrityError(path, f"invalid JSON ({exc})") from exc


def verify_ladder_files(directory: PathLike, manifest: Mapping[str, Any]) -> None:
    """Check every file listed in the manifest exists and matches its hash."""
    root = Path(directory)
    for name, expected in manifest.get("files", {}).items():
        path = root / name
        if not path.exists():
            raise LadderIntegrityError(path, "listed in ladder.json but missing")
        if sha256_file(path) != expected:
            raise LadderIntegrityError(path, "hash does not match ladder.json")


def load_ladder(
    directory: PathLike,
    *,
    verify: bool = True,
    encode: Optional[EncodeFn] = None,
) -> CompressionLadder:
    manifest = read_ladder_manifest(directory)
    if verify:
        verify_ladder_files(directory, manifest)
    root = Path(directory)
    codec = CodecSpec.from_dict(manifest, encode=encode) if manifest.get(
        "codec_id"
    ) != CodecId.GENERIC.value else decoded_only_codec(manifest)
    source = ImageBuffer.read(root / REFERENCE_FILE)
    rungs = {level: ImageBuffer.read(root / rung_filename(level)) for level in codec.levels}
    return CompressionLadder(source=source, codec=codec, rungs=rungs)


def decoded_only_codec(manifest: Mapping[str, Any]) -> CodecSpec:
    # Stored GENERIC ladders are already decoded; re-encoding is not needed to read them.
    def _unavailable(_: ImageBuffer, level: int) -> ImageBuffer:
        raise CodecFailure(level, "GENERIC ladder loaded from disk has no encoder")

    return CodecSpec.from_dict(manifest, encode=_unavailable)


def build_ladder(
    source: ImageBuffer, codec: CodecSpec, *, workers: int = 1
) -> CompressionLadder:
    """Encode ``source`` at every level of ``codec`` and keep the decoded rungs."""
    if source.width < MIN_LADDER_SIDE or source.height < MIN_LADDER_SIDE:
        raise DimensionMismatch(
            f"source is {source.width}x{source.height}; ladders need at least "
            f"{MIN_LADDER_SIDE}x{MIN_LADDER_SIDE}"
        )

    def _encode(level: int) -> Tuple[int, ImageBuffer]:
        try:
            rung = codec.roundtrip(source, level)
        except JndscopeError:
            raise
        except Exception as exc:
            raise CodecFailure(level, str(exc)) from exc
        if rung.shape != source.shape:
            raise DimensionMismatch(
                f"level {level} decoded to {rung.shape}, source is {source.shape}"
            )
        return level, rung

    levels = list(codec.levels)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rungs = dict(executor.map(_encode, levels))
    else:
        rungs = dict(_encode(level) for level in levels)
    return CompressionLadder(source=source, codec=codec, rungs=rungs)


@dataclass(frozen=True)
class LabelSequence:
    """Binary lossy (1) / lossless (0) labels keyed by level."""

    codec: CodecSpec
    labels: Mapping[int, int]
    origin: LabelOrigin = LabelOrigin.PREDICTED

    def __post_init__(self) -> None:
        labels = {int(level): int(bit) for level, bit in sorted(self.labels.items())}
        outside = [level for level in labels if not self.codec.contains(level)]
        if outside:
            raise OutOfRange(
                f"labels outside {self.codec.level_range}: {outside[:10]}"
            )
        bad = [level for level, bit in labels.items() if bit not in (0, 1)]
        if bad:
            raise ValueError(f"labels must be 0 or 1; offending levels {bad[:10]}")
        object.__setattr__(self, "labels", MappingProxyType(labels))
        object.__setattr__(self, "origin", LabelOrigin(self.origin))

    @classmethod
    def from_bits(
        cls,
        codec: CodecSpec,
        bits: "list[int] | tuple[int, ...] | np.ndarray",
        origin: LabelOrigin = LabelOrigin.PREDICTED,
    ) -> "LabelSequence":
        bits = [int(b) for b in bits]
        if len(bits) != codec.size:
            raise IncompleteSequence(
                f"expected {codec.size} labels for {codec.level_range}, got {len(bits)}"
            )
        return cls(codec=codec, labels=dict(zip(codec.levels, bits)), origin=origin)

    def missing_levels(self) -> list[int]:
        return [level for level in self.codec.levels if level not in self.labels]

    @property
    def is_complete(self) -> bool:
        return not self.missing_levels()

    def require_complete(self) -> None:
        missing = self.missing_levels()
        if missing:
            raise IncompleteSequence(
                f"{len(missing)} level(s) unlabeled, first: {missing[:10]}"
            )

    def bits(self) -> np.ndarray:
        self.require_complete()
        return np.fromiter(
            (self.labels[level] for level in self.codec.levels), dtype=np.int64
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "codec": self.codec.to_dict(),
            "origin": self.origin.value,
            "labels": {str(level): bit for level, bit in self.labels.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LabelSequence":
        codec_data = dict(data["codec"])
        if codec_data.get("codec_id") == CodecId.GENERIC.value:
            codec = decoded_only_codec(codec_data)
        else:
            codec = CodecSpec.from_dict(codec_data)
        return cls(
            codec=codec,
            labels={int(level): int(bit) for level, bit in data["labels"].items()},
            origin=LabelOrigin(data.get("origin", LabelOrigin.PREDICTED.value)),
        )


def labels_from_jnd(jnd_target: int, codec: CodecSpec) -> LabelSequence:
    """Ground truth: level is lossy iff it lies below the JND target."""
    if not codec.contains(int(jnd_target)):
        raise OutOfRange(
            f"jnd_target {jnd_target} outside level range {codec.level_range}"
        )
    labels = {level: int(level < jnd_target) for level in codec.levels}
    return LabelSequence(codec=codec, labels=labels, origin=LabelOrigin.GROUND_TRUTH)


@dataclass(frozen=True)
class JNDResult:
    """A predicted JND level (``None`` when no level qualifies) with provenance."""

    jnd_level: Optional[int]
    strategy: SearchStrategy
    window: int
    threshold: int
    source_labels: LabelSequence
    image_id: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", SearchStrategy(self.strategy))
        if self.jnd_level is not None and not self.source_labels.codec.contains(
            self.jnd_level
        ):
            raise OutOfRange(
                f"jnd_level {self.jnd_level} outside "
                f"{self.source_labels.codec.level_range}"
            )

    @property
    def is_none(self) -> bool:
        return self.jnd_level is None

    def level_or_overflow(self) -> int:
        """Explicit NONE mapping: one past the top of the level range."""
        if self.jnd_level is None:
            return self.source_labels.codec.level_range[1] + 1
        return self.jnd_level

    def to_dict(self) -> Dict[str, Any]:
        return {
            "image_id": self.image_id,
            "jnd_level": self.jnd_level,
            "strategy": self.strategy.value,
            "window": self.window,
            "threshold": self.threshold,
            "source_labels": self.source_labels.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "JNDResult":
        level = data.get("jnd_level")
        return cls(
            jnd_level=None if level is None else int(level),
            strategy=SearchStrategy(data["strategy"]),
            window=int(data["window"]),
            threshold=int(data["threshold"]),
            source_labels=LabelSequence.from_dict(data["source_labels"]),
            image_id=data.get("image_id"),
        )

    @classmethod
    def from_json(cls, text: str) -> "JNDResult":
        return cls.from_dict(json.loads(text))

    @classmethod
    def read(cls, path: PathLike) -> "JNDResult":
        return cls.from_json(Path(path).read_text("utf-8"))
