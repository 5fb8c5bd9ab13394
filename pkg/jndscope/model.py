"""End-to-end JND classifier (backbone, fusion, head) and the classifier protocol."""

from __future__ import annotations

from typing import Dict, Protocol, Sequence, Tuple, runtime_checkable

import torch
from torch import nn

from jndscope.backbone import Backbone, image_to_tensor
from jndscope.configuration.schema import TrainConfig
from jndscope.core import ImageBuffer
from jndscope.errors import ShapeMismatch
from jndscope.evaluation import psnr
from jndscope.fusion import Fusion
from jndscope.head import ImageDecision, PredictionHead
from jndscope.patcher import PatchPair

BACKBONE_PREFIX = "backbone."


class JNDNet(nn.Module):
    """Maps ``(B, N, 3, s, s)`` reference/distorted patch stacks to ``(q_dist, scores, weights)``."""

    def __init__(self, config: TrainConfig, *, load_weights: bool = True):
        super().__init__()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.backbone = Backbone(config.backbone, load_weights=load_weights)
            self.fusion = Fusion(
                self.backbone.widths,
                config.fusion.d_model,
                config.fusion.heads,
                layer_norm=config.fusion.layer_norm,
                use_csa=config.fusion.use_csa,
            )
            self.head = PredictionHead(
                config.fusion.d_model,
                config.head.hidden,
                use_patch_weight=config.head.use_patch_weight,
            )

    def forward(
        self, ref: torch.Tensor, dist: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if ref.shape != dist.shape or ref.dim() != 5:
            raise ShapeMismatch(
                f"expected matching (B, N, C, s, s) stacks, got {tuple(ref.shape)} and {tuple(dist.shape)}"
            )
        batch, patches = ref.shape[:2]
        flat = torch.cat([ref.flatten(0, 1), dist.flatten(0, 1)])
        with torch.set_grad_enabled(torch.is_grad_enabled() and not self.config.backbone.frozen):
            stages = self.backbone(flat)
        half = batch * patches
        tokens = self.fusion([s[:half] for s in stages], [s[half:] for s in stages])
        tokens = tokens.reshape(batch, patches, *tokens.shape[1:])
        return self.head(tokens)

    def trainable_state(self) -> Dict[str, torch.Tensor]:
        """State dict for checkpoints; a frozen pretrained backbone is left out."""
        state = self.state_dict()
        if self.backbone.ships_with_checkpoint:
            return state
        return {k: v for k, v in state.items() if not k.startswith(BACKBONE_PREFIX)}

    def load_trainable_state(self, state: Dict[str, torch.Tensor]) -> None:
        try:
            missing, unexpected = self.load_state_dict(state, strict=False)
        except RuntimeError as exc:
            raise ShapeMismatch(f"checkpoint does not fit the network: {exc}") from exc
        if not self.backbone.ships_with_checkpoint:
            missing = [k for k in missing if not k.startswith(BACKBONE_PREFIX)]
        if missing or unexpected:
            raise ShapeMismatch(
                f"checkpoint does not fit the network: missing {missing[:3]}, unexpected {unexpected[:3]}"
            )


def pairs_to_tensors(pairs: Sequence[PatchPair]) -> Tuple[torch.Tensor, torch.Tensor]:
    """Stack patch pairs into ``(1, N, 3, s, s)`` reference and distorted tensors."""
    ref = image_to_tensor([pair.ref_patch for pair in pairs]).unsqueeze(0)
    dist = image_to_tensor([pair.dist_patch for pair in pairs]).unsqueeze(0)
    return ref, dist


@runtime_checkable
class Classifier(Protocol):
    """Per-level lossy/lossless decision for one distorted image."""

    uses_patches: bool

    def decide(
        self, ref: ImageBuffer, dist: ImageBuffer, pairs: Sequence[PatchPair]
    ) -> ImageDecision: ...


class NetworkClassifier:
    uses_patches = True

    def __init__(self, net: JNDNet):
        self.net = net.eval()

    def decide(
        self, ref: ImageBuffer, dist: ImageBuffer, pairs: Sequence[PatchPair]
    ) -> ImageDecision:
        ref_t, dist_t = pairs_to_tensors(pairs)
        with torch.no_grad():
            q, _, _ = self.net(ref_t, dist_t)
        return ImageDecision.from_q(float(q[0]))


class PsnrThresholdClassifier:
    """Deterministic stand-in: lossy iff PSNR(ref, dist) <= ``threshold_db``."""

    uses_patches = False

    def __init__(self, threshold_db: float, *, luma_only: bool = False):
        self.threshold_db = float(threshold_db)
        self.luma_only = luma_only

    def decide(
        self, ref: ImageBuffer, dist: ImageBuffer, pairs: Sequence[PatchPair] = ()
    ) -> ImageDecision:
        lossy = psnr(ref, dist, luma_only=self.luma_only) <= self.threshold_db
        return ImageDecision.from_q(1.0 if lossy else 0.0)
