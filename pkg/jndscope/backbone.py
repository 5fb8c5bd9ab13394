"""Five-stage multi-scale feature pyramids from a convolutional backbone."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from torch import nn

from jndscope.configuration.schema import BackboneSpec
from jndscope.core import ImageBuffer
from jndscope.errors import JndscopeError

STAGE_COUNT = 5
RESNET50_WIDTHS = (64, 256, 512, 1024, 2048)
RESNET50_STRIDES = (2, 4, 8, 16, 32)
INPUT_MULTIPLE = 32


class WeightLoadError(JndscopeError):
    """Backbone weights are missing, unreadable or do not fit the architecture."""


class ShapeError(JndscopeError, ValueError):
    """Input size is not compatible with the five-stage pyramid."""


@dataclass(frozen=True)
class FeaturePyramid:
    """Five stage tensors, finest first; ``stage_meta`` holds each stage's downsample factor."""

    stages: Tuple[torch.Tensor, ...]
    stage_meta: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.stages) != STAGE_COUNT or len(self.stage_meta) != STAGE_COUNT:
            raise ShapeError(f"a pyramid has exactly {STAGE_COUNT} stages")

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(int(stage.shape[-3]) for stage in self.stages)

    @property
    def sizes(self) -> Tuple[Tuple[int, int], ...]:
        return tuple((int(s.shape[-2]), int(s.shape[-1])) for s in self.stages)


class ToyCNN(nn.Module):
    """Conv3x3 + ReLU per stage; stage 1 keeps the stride from config, later stages halve."""

    def __init__(
        self,
        channels: Sequence[int] = (8, 16, 32, 64, 128),
        *,
        in_channels: int = 3,
        stage1_stride: int = 1,
        seed: int = 0,
    ):
        super().__init__()
        self.widths = tuple(int(c) for c in channels)
        self.strides = tuple(stage1_stride * 2**k for k in range(STAGE_COUNT))
        layers: List[nn.Module] = []
        previous = in_channels
        for k, width in enumerate(self.widths):
            stride = stage1_stride if k == 0 else 2
            layers.append(
                nn.Sequential(
                    nn.Conv2d(previous, width, kernel_size=3, stride=stride, padding=1),
                    nn.ReLU(),
                )
            )
            previous = width
        self.stages = nn.ModuleList(layers)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for module in self.modules():
                if isinstance(module, nn.Conv2d):
                    nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
                    nn.init.zeros_(module.bias)

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        outputs = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x)
        return outputs


class ResNet50Stages(nn.Module):
    """torchvision ResNet-50 tapped at the stem (stage 1) and after layer1..layer4."""

    def __init__(self) -> None:
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        self.conv1, self.bn1, self.relu, self.maxpool = net.conv1, net.bn1, net.relu, net.maxpool
        self.layer1, self.layer2, self.layer3, self.layer4 = (
            net.layer1,
            net.layer2,
            net.layer3,
            net.layer4,
        )
        self.widths = RESNET50_WIDTHS
        self.strides = RESNET50_STRIDES

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        stem = self.relu(self.bn1(self.conv1(x)))
        c2 = self.layer1(self.maxpool(stem))
        c3 = self.layer2(c2)
        c4 = self.layer3(c3)
        c5 = self.layer4(c4)
        return [stem, c2, c3, c4, c5]


def stage_widths_from_state_dict(state: Dict[str, torch.Tensor]) -> Tuple[int, ...]:
    """Read stage widths from the weight shapes of a ResNet-style state dict."""
    try:
        stem = int(state["conv1.weight"].shape[0])
        widths = [stem]
        for layer in ("layer1", "layer2", "layer3", "layer4"):
            keys = sorted(k for k in state if k.startswith(f"{layer}.") and k.endswith("conv3.weight"))
            widths.append(int(state[keys[-1]].shape[0]))
    except (KeyError, IndexError) as exc:
        raise WeightLoadError(f"weights do not look like a ResNet-50 ({exc})") from exc
    return tuple(widths)


def sha256_path(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def resolve_weights(spec: BackboneSpec) -> Path:
    """Return a local weights file, downloading it from the Hub when no path is set."""
    if spec.weights_path:
        path = Path(spec.weights_path).expanduser()
        if not path.is_file():
            raise WeightLoadError(f"weights file not found: {path}")
        return path
    if not spec.hub_repo:
        raise WeightLoadError("PRETRAINED_RESNET50 needs weights_path or hub_repo")
    try:
        from huggingface_hub import hf_hub_download

        return Path(hf_hub_download(repo_id=spec.hub_repo, filename=spec.hub_filename))
    except Exception as exc:
        raise WeightLoadError(
            f"could not fetch {spec.hub_repo}/{spec.hub_filename}: {exc}"
        ) from exc


def read_state_dict(path: Path) -> Dict[str, torch.Tensor]:
    try:
        if path.suffix == ".safetensors":
            from safetensors.torch import load_file

            return load_file(str(path))
        state = torch.load(str(path), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise WeightLoadError(f"cannot read weights from {path}: {exc}") from exc
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    if not isinstance(state, dict):
        raise WeightLoadError(f"{path} does not contain a state dict")
    return state


class Backbone(nn.Module):
    """Normalises [0, 1] RGB patches and returns the five stage activations."""

    def __init__(self, spec: BackboneSpec, *, load_weights: bool = True):
        super().__init__()
        self.spec = spec
        self.weights_sha256: Optional[str] = None
        if spec.kind == "PRETRAINED_RESNET50":
            self.net: nn.Module = ResNet50Stages()
            if load_weights:
                self._load_pretrained()
        else:
            self.net = ToyCNN(
                spec.channels, stage1_stride=spec.stage1_stride, seed=spec.init_seed
            )
        mean, std = spec.normalization()
        self.register_buffer("mean", torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1))
        if spec.frozen:
            for parameter in self.net.parameters():
                parameter.requires_grad_(False)
            self.net.eval()

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(self.net.widths)

    @property
    def strides(self) -> Tuple[int, ...]:
        return tuple(self.net.strides)

    @property
    def ships_with_checkpoint(self) -> bool:
        """Whether checkpoints must carry the backbone parameters."""
        return not (self.spec.kind == "PRETRAINED_RESNET50" and self.spec.frozen)

    def _load_pretrained(self) -> None:
        path = resolve_weights(self.spec)
        state = read_state_dict(path)
        widths = stage_widths_from_state_dict(state)
        if widths != RESNET50_WIDTHS:
            raise WeightLoadError(f"unexpected stage widths {widths}, want {RESNET50_WIDTHS}")
        state = {k: v for k, v in state.items() if not k.startswith("fc.")}
        missing, unexpected = self.net.load_state_dict(state, strict=False)
        if missing:
            raise WeightLoadError(f"weights are missing {len(missing)} tensors, e.g. {missing[:3]}")
        self.weights_sha256 = sha256_path(path)

    def train(self, mode: bool = True) -> "Backbone":
        super().train(mode)
        if self.spec.frozen:
            self.net.eval()
        return self

    def forward(self, x: torch.Tensor) -> List[torch.Tensor]:
        height, width = x.shape[-2:]
        if height % INPUT_MULTIPLE or width % INPUT_MULTIPLE:
            raise ShapeError(
                f"patch {width}x{height} is not divisible by {INPUT_MULTIPLE}"
            )
        return self.net((x - self.mean) / self.std)


def image_to_tensor(images: Sequence[ImageBuffer]) -> torch.Tensor:
    """Stack images as a float (N, 3, H, W) tensor in [0, 1]; gray is replicated."""
    arrays = np.stack([image.pixels for image in images]).astype(np.float32) / 255.0
    if arrays.shape[-1] == 1:
        arrays = np.repeat(arrays, 3, axis=-1)
    return torch.from_numpy(arrays).permute(0, 3, 1, 2).contiguous()


def extract_pyramid(
    patch: ImageBuffer, spec: Union[BackboneSpec, Backbone]
) -> FeaturePyramid:
    backbone = spec if isinstance(spec, Backbone) else Backbone(spec)
    if patch.width % INPUT_MULTIPLE or patch.height % INPUT_MULTIPLE:
        raise ShapeError(
            f"patch {patch.width}x{patch.height} is not divisible by {INPUT_MULTIPLE}"
        )
    with torch.no_grad():
        stages = backbone(image_to_tensor([patch]))
    return FeaturePyramid(
        stages=tuple(stage[0] for stage in stages), stage_meta=backbone.strides
    )
