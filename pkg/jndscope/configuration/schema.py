"""Pydantic models describing the configuration schema."""

from __future__ import annotations

from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MetaConfig(StrictModel):
    version: str = "1.0"


class RunConfig(StrictModel):
    root: str = "runs"
    name: str = "default"
    workers: int = Field(default=1, ge=1, le=64)

    @field_validator("name")
    @classmethod
    def validate_name(cls, value: str) -> str:
        if not value.strip() or "/" in value or "\\" in value or value in {".", ".."}:
            raise ValueError("run name must be a single non-empty path component")
        return value


class CodecConfig(StrictModel):
    codec_id: Literal["JPEG", "GENERIC"] = "JPEG"
    level_range: Tuple[int, int] = (1, 100)

    @model_validator(mode="after")
    def validate_range(self) -> "CodecConfig":
        lo, hi = self.level_range
        if lo > hi:
            raise ValueError("level_range start must be <= end")
        if self.codec_id == "JPEG" and not (1 <= lo and hi <= 100):
            raise ValueError("JPEG quality levels must lie within [1, 100]")
        return self


class SyntheticConfig(StrictModel):
    seed: int = 7
    count: int = Field(default=16, ge=1)
    size: int = Field(default=256, ge=32)
    threshold_db: Tuple[float, float] = (30.0, 42.0)

    @field_validator("threshold_db")
    @classmethod
    def validate_threshold(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if value[0] > value[1]:
            raise ValueError("threshold_db must be an increasing (low, high) pair")
        return value


class GevConfig(StrictModel):
    quantile: float = Field(default=0.5, gt=0.0, lt=1.0)
    min_samples: int = Field(default=5, ge=3)


class DatasetConfig(StrictModel):
    layout: Literal["SYNTHETIC", "LADDER_DIR", "MCL_JCI", "KONJND_1K"] = "SYNTHETIC"
    root: Optional[str] = None
    codec: CodecConfig = Field(default_factory=CodecConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    gev: GevConfig = Field(default_factory=GevConfig)

    @model_validator(mode="after")
    def require_root(self) -> "DatasetConfig":
        if self.layout != "SYNTHETIC" and not self.root:
            raise ValueError(f"dataset.root is required for layout {self.layout}")
        return self


class BackboneSpec(StrictModel):
    kind: Literal["TOY_CNN", "PRETRAINED_RESNET50"] = "TOY_CNN"
    weights_path: Optional[str] = None
    hub_repo: Optional[str] = "timm/resnet50.tv_in1k"
    hub_filename: str = "model.safetensors"
    frozen: bool = True
    mean: Optional[Tuple[float, float, float]] = None
    std: Optional[Tuple[float, float, float]] = None
    channels: Tuple[int, int, int, int, int] = (8, 16, 32, 64, 128)
    stage1_stride: Literal[1, 2] = 1
    init_seed: int = 0

    @field_validator("std")
    @classmethod
    def validate_std(cls, value):
        if value is not None and any(v <= 0 for v in value):
            raise ValueError("normalization std must be positive")
        return value

    @field_validator("channels")
    @classmethod
    def validate_channels(cls, value):
        if any(v < 1 for v in value):
            raise ValueError("stage channel widths must be positive")
        return value

    def normalization(self) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
        """Input statistics; the toy network defaults to the identity transform."""
        if self.kind == "PRETRAINED_RESNET50":
            default_mean, default_std = IMAGENET_MEAN, IMAGENET_STD
        else:
            default_mean, default_std = (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)
        return tuple(self.mean or default_mean), tuple(self.std or default_std)


class FusionConfig(StrictModel):
    d_model: int = Field(default=256, ge=4)
    heads: int = Field(default=4, ge=1)
    use_csa: bool = True
    layer_norm: bool = False

    @model_validator(mode="after")
    def validate_dims(self) -> "FusionConfig":
        if self.d_model % 4:
            raise ValueError("d_model must be divisible by 4 for 2-D position encoding")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        return self


class HeadConfig(StrictModel):
    hidden: Tuple[int, int] = (128, 64)
    use_patch_weight: bool = True


class SearchConfig(StrictModel):
    strategy: Literal["NAIVE", "WINDOW"] = "WINDOW"
    window: int = Field(default=6, ge=0)
    threshold: int = Field(default=5, ge=0)

    @model_validator(mode="after")
    def validate_threshold(self) -> "SearchConfig":
        if self.strategy == "WINDOW" and self.threshold > self.window + 1:
            raise ValueError("threshold must be <= window + 1")
        return self

    def to_spec(self):
        from jndscope.search import SearchSpec

        return SearchSpec.from_config(self)


class TrainConfig(StrictModel):
    lr: float = Field(default=1e-4, gt=0.0)
    batch_size: int = Field(default=16, ge=1)
    epochs: int = Field(default=50, ge=1)
    lr_decay: float = Field(default=0.8, gt=0.0, le=1.0)
    lr_step: int = Field(default=10, ge=1)
    folds: int = Field(default=10, ge=3)
    fold: int = Field(default=0, ge=0)
    seed: int = 0
    n_patches: int = Field(default=16, ge=1)
    patch_size: int = Field(default=64, ge=32)
    levels_per_image: int = Field(default=8, ge=1)
    boundary_band: int = Field(default=10, ge=0)
    boundary_fraction: float = Field(default=0.5, ge=0.0, le=1.0)
    val_levels: int = Field(default=8, ge=1)
    backbone: BackboneSpec = Field(default_factory=BackboneSpec)
    fusion: FusionConfig = Field(default_factory=FusionConfig)
    head: HeadConfig = Field(default_factory=HeadConfig)
    search: SearchConfig = Field(default_factory=SearchConfig)

    @field_validator("patch_size")
    @classmethod
    def validate_patch_size(cls, value: int) -> int:
        if value % 32:
            raise ValueError("patch_size must be divisible by 32")
        return value

    @model_validator(mode="after")
    def validate_fold(self) -> "TrainConfig":
        if self.fold >= self.folds:
            raise ValueError(f"fold must be < folds ({self.folds})")
        return self


class EvalConfig(StrictModel):
    luma_only: bool = False


class JndscopeConfig(StrictModel):
    meta: MetaConfig = Field(default_factory=MetaConfig)
    run: RunConfig = Field(default_factory=RunConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def validate_synthetic_feasible(self) -> "JndscopeConfig":
        """Synthetic images must hold the disjoint patches and cover every fold."""
        if self.dataset.layout != "SYNTHETIC":
            return self
        synthetic, train = self.dataset.synthetic, self.train
        capacity = (synthetic.size // train.patch_size) ** 2
        if capacity < train.n_patches:
            raise ValueError(
                f"train.n_patches: {train.n_patches} disjoint {train.patch_size}x{train.patch_size} "
                f"patches do not fit a {synthetic.size}x{synthetic.size} synthetic image "
                f"(at most {capacity})"
            )
        if synthetic.count < train.folds:
            raise ValueError(
                f"dataset.synthetic.count: {synthetic.count} images cannot be split into "
                f"{train.folds} folds"
            )
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "JndscopeConfig":
        return cls.model_validate(data)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)
