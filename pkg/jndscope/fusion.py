"""Differential feature fusion with coarse-to-fine cross-scale attention.

Each backbone stage is turned into ``cat(ref, dist, ref - dist)``, average
pooled to the coarsest grid and projected to ``d_model`` channels. A fixed
2-D sinusoidal position encoding is added once per stage. The coarsest stage
then queries stages 4, 3, 2 and 1 in turn (residual attention), and a final
self-attention layer produces the fused tokens of one patch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from jndscope.backbone import STAGE_COUNT, FeaturePyramid
from jndscope.errors import JndscopeError, ShapeMismatch

PE_BASE = 10000.0


class PositionEncodingError(JndscopeError, ValueError):
    """A stage reached the cascade without exactly one position encoding."""


@dataclass(frozen=True)
class FusedStage:
    """Tokens ``(..., H*W, d_model)`` on the common grid; ``position_count`` tags PE applications."""

    tokens: torch.Tensor
    grid: Tuple[int, int]
    scale: int
    position_count: int = 0

    def __post_init__(self) -> None:
        if self.tokens.shape[-2] != self.grid[0] * self.grid[1]:
            raise ShapeMismatch(
                f"{self.tokens.shape[-2]} tokens do not match grid {self.grid}"
            )


def attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, d_k: int
) -> torch.Tensor:
    """Scaled dot-product attention with a max-subtracted softmax."""
    return attention_weights(q, k, d_k) @ v


def attention_weights(q: torch.Tensor, k: torch.Tensor, d_k: int) -> torch.Tensor:
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatch(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(d_k)
    scores = scores - scores.amax(dim=-1, keepdim=True)
    weights = torch.exp(scores)
    return weights / weights.sum(dim=-1, keepdim=True)


@lru_cache(maxsize=32)
def _position_table(height: int, width: int, d_model: int) -> torch.Tensor:
    if d_model % 4:
        raise ValueError("d_model must be divisible by 4")
    quarter = d_model // 4
    freqs = 1.0 / PE_BASE ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    ys, xs = torch.meshgrid(
        torch.arange(height, dtype=torch.float64),
        torch.arange(width, dtype=torch.float64),
        indexing="ij",
    )
    ys, xs = ys.reshape(-1, 1) * freqs, xs.reshape(-1, 1) * freqs
    table = torch.cat([ys.sin(), ys.cos(), xs.sin(), xs.cos()], dim=1)
    return table.to(torch.float32)


def position_table(grid: Tuple[int, int], d_model: int) -> torch.Tensor:
    """Fixed 2-D sinusoidal table of shape ``(H*W, d_model)``: half rows, half columns."""
    return _position_table(int(grid[0]), int(grid[1]), int(d_model)).clone()


def add_position_encoding(stage: FusedStage) -> FusedStage:
    table = position_table(stage.grid, stage.tokens.shape[-1]).to(
        dtype=stage.tokens.dtype, device=stage.tokens.device
    )
    return replace(stage, tokens=stage.tokens + table, position_count=stage.position_count + 1)


def pool_stage(
    ref: torch.Tensor, dist: torch.Tensor, grid: Tuple[int, int]
) -> torch.Tensor:
    """``AvgPool(cat(ref, dist, ref - dist))`` on ``(B, C, H, W)`` maps, pooled to ``grid``."""
    if ref.shape != dist.shape:
        raise ShapeMismatch(f"stage shapes differ: {tuple(ref.shape)} vs {tuple(dist.shape)}")
    stacked = torch.cat([ref, dist, ref - dist], dim=1)
    return F.adaptive_avg_pool2d(stacked, grid)


class CSALayer(nn.Module):
    """``attention(Wq q, Wk kv, Wv kv) + q`` with optional heads and layer norm."""

    def __init__(self, d_model: int, heads: int = 1, *, layer_norm: bool = False):
        super().__init__()
        if d_model % heads:
            raise ValueError("d_model must be divisible by heads")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        self.Wq = nn.Linear(d_model, d_model, bias=False)
        self.Wk = nn.Linear(d_model, d_model, bias=False)
        self.Wv = nn.Linear(d_model, d_model, bias=False)
        self.out = nn.Linear(d_model, d_model, bias=False) if heads > 1 else None
        self.norm = nn.LayerNorm(d_model) if layer_norm else None

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        *lead, tokens, _ = x.shape
        return x.reshape(*lead, tokens, self.heads, self.d_k).transpose(-3, -2)

    def forward(self, query: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        if query.shape[-1] != self.d_model or kv.shape[-1] != self.d_model:
            raise ShapeMismatch(
                f"expected d_model={self.d_model}, got {query.shape[-1]} and {kv.shape[-1]}"
            )
        q, k, v = self.Wq(query), self.Wk(kv), self.Wv(kv)
        if self.heads == 1:
            attended = attention(q, k, v, self.d_k)
        else:
            merged = attention(self._split(q), self._split(k), self._split(v), self.d_k)
            attended = self.out(merged.transpose(-3, -2).reshape(query.shape))
        output = attended + query
        if self.norm is not None:
            output = self.norm(output)
        return output


class Fusion(nn.Module):
    """Stage projections ``proj1..proj5``, cascade layers ``stage1..stage4`` and ``final``."""

    def __init__(
        self,
        widths: Sequence[int],
        d_model: int = 256,
        heads: int = 4,
        *,
        layer_norm: bool = False,
        use_csa: bool = True,
    ):
        super().__init__()
        if len(widths) != STAGE_COUNT:
            raise ShapeMismatch(f"need {STAGE_COUNT} stage widths, got {len(widths)}")
        self.d_model = d_model
        self.use_csa = use_csa
        for k, width in enumerate(widths, start=1):
            self.add_module(f"proj{k}", nn.Linear(3 * width, d_model))
        for k in range(1, STAGE_COUNT):
            self.add_module(f"stage{k}", CSALayer(d_model, heads, layer_norm=layer_norm))
        self.final = CSALayer(d_model, heads, layer_norm=layer_norm)

    def projection(self, k: int) -> nn.Linear:
        return getattr(self, f"proj{k}")

    def layer(self, k: int) -> CSALayer:
        return getattr(self, f"stage{k}")

    def pool_and_project(
        self, ref_stages: Sequence[torch.Tensor], dist_stages: Sequence[torch.Tensor]
    ) -> List[FusedStage]:
        """Batched stages ``(B, C_k, H_k, W_k)`` to five FusedStages on the stage-5 grid."""
        if len(ref_stages) != STAGE_COUNT or len(dist_stages) != STAGE_COUNT:
            raise ShapeMismatch(f"pyramids must have {STAGE_COUNT} stages")
        grid = (int(ref_stages[-1].shape[-2]), int(ref_stages[-1].shape[-1]))
        fused = []
        for k, (ref, dist) in enumerate(zip(ref_stages, dist_stages), start=1):
            pooled = pool_stage(ref, dist, grid)
            tokens = self.projection(k)(pooled.flatten(2).transpose(1, 2))
            fused.append(FusedStage(tokens=tokens, grid=grid, scale=k))
        return fused

    def cascade(self, stages: Sequence[FusedStage]) -> torch.Tensor:
        if len(stages) != STAGE_COUNT:
            raise ShapeMismatch(f"cascade needs {STAGE_COUNT} stages")
        for stage in stages:
            if stage.position_count != 1:
                raise PositionEncodingError(
                    f"stage {stage.scale} carries {stage.position_count} position encodings"
                )
        if not self.use_csa:
            return stages[0].tokens
        query = stages[-1].tokens
        for k in range(STAGE_COUNT - 1, 0, -1):
            query = self.layer(k)(query, stages[k - 1].tokens)
        return self.final(query, query)

    def forward(
        self, ref_stages: Sequence[torch.Tensor], dist_stages: Sequence[torch.Tensor]
    ) -> torch.Tensor:
        stages = [add_position_encoding(s) for s in self.pool_and_project(ref_stages, dist_stages)]
        return self.cascade(stages)


def build_fusion(
    widths: Sequence[int],
    d_model: int,
    heads: int = 1,
    *,
    layer_norm: bool = False,
    use_csa: bool = True,
    seed: int = 0,
) -> Fusion:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return Fusion(widths, d_model, heads, layer_norm=layer_norm, use_csa=use_csa)


def diff_concat_pool(
    pyr_ref: FeaturePyramid,
    pyr_dist: FeaturePyramid,
    d_model: Union[int, Fusion],
) -> List[FusedStage]:
    """Single-patch fusion input: five projected FusedStages (no position encoding yet)."""
    if pyr_ref.sizes != pyr_dist.sizes or pyr_ref.widths != pyr_dist.widths:
        raise ShapeMismatch("pyramids differ in stage shapes")
    fusion = d_model if isinstance(d_model, Fusion) else build_fusion(pyr_ref.widths, d_model)
    stages = fusion.pool_and_project(
        [s.unsqueeze(0) for s in pyr_ref.stages], [s.unsqueeze(0) for s in pyr_dist.stages]
    )
    return [replace(stage, tokens=stage.tokens[0]) for stage in stages]


def csa_layer(
    query_stage: FusedStage, kv_stage: FusedStage, params: CSALayer
) -> FusedStage:
    if query_stage.grid != kv_stage.grid:
        raise ShapeMismatch(f"grids differ: {query_stage.grid} vs {kv_stage.grid}")
    return replace(query_stage, tokens=params(query_stage.tokens, kv_stage.tokens))


def cascade(stages: Sequence[FusedStage], params: Fusion) -> torch.Tensor:
    """Final fused token matrix ``(H5*W5, d_model)`` for one patch."""
    return params.cascade(stages)


def zero_value_paths(fusion: Fusion) -> None:
    """Zero every ``Wv`` so the cascade reduces to its residual path."""
    with torch.no_grad():
        for k in range(1, STAGE_COUNT):
            fusion.layer(k).Wv.weight.zero_()
        fusion.final.Wv.weight.zero_()
