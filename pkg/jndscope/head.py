"""Patch score/weight branches, weighted aggregation and the training loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import expit
from torch import nn

from jndscope.errors import EmptyInput, LengthMismatch, ShapeMismatch

Q_CLIP = 1e-7
WEIGHT_EPS = 1e-6
DECISION_THRESHOLD = 0.5


class MLP(nn.Module):
    """Mean-pooled tokens through two hidden ReLU layers to one scalar per patch."""

    def __init__(self, d_in: int, hidden: Sequence[int] = (128, 64)):
        super().__init__()
        self.d_in = d_in
        widths = [d_in, *hidden]
        layers: List[nn.Module] = []
        for a, b in zip(widths[:-1], widths[1:]):
            layers += [nn.Linear(a, b), nn.ReLU()]
        layers.append(nn.Linear(widths[-1], 1))
        self.layers = nn.Sequential(*layers)

    @property
    def output_layer(self) -> nn.Linear:
        return self.layers[-1]

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[-1] != self.d_in:
            raise ShapeMismatch(f"MLP expects {self.d_in} features, got {tokens.shape[-1]}")
        return self.layers(tokens.mean(dim=-2)).squeeze(-1)


def zero_output_layer(mlp: MLP) -> None:
    with torch.no_grad():
        mlp.output_layer.weight.zero_()
        mlp.output_layer.bias.zero_()


class PredictionHead(nn.Module):
    """``mlp1`` scores and ``mlp2`` weights patches; ``forward`` aggregates per image."""

    def __init__(
        self, d_model: int, hidden: Sequence[int] = (128, 64), *, use_patch_weight: bool = True
    ):
        super().__init__()
        self.use_patch_weight = use_patch_weight
        self.mlp1 = MLP(d_model, hidden)
        self.mlp2 = MLP(d_model, hidden)

    def score_and_weight(self, tokens: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        scores = self.mlp1(tokens)
        if self.use_patch_weight:
            weights = F.softplus(self.mlp2(tokens)) + WEIGHT_EPS
        else:
            weights = torch.ones_like(scores)
        return scores, weights

    def forward(self, tokens: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """``tokens`` is ``(B, N, T, D)``; returns ``(q_dist (B,), scores (B, N), weights (B, N))``."""
        scores, weights = self.score_and_weight(tokens)
        return aggregate_batch(scores, weights), scores, weights


def aggregate_batch(scores: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid((scores * weights).sum(dim=-1) / weights.sum(dim=-1))


def bce_torch(q: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy(q.clamp(Q_CLIP, 1.0 - Q_CLIP), gt.to(q.dtype))


@dataclass(frozen=True)
class PatchAssessment:
    score: float
    weight: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.score) and np.isfinite(self.weight)):
            raise ValueError("patch score and weight must be finite")


@dataclass(frozen=True)
class ImageDecision:
    q_dist: float
    label: int

    @classmethod
    def from_q(cls, q_dist: float) -> "ImageDecision":
        return cls(q_dist=float(q_dist), label=int(q_dist > DECISION_THRESHOLD))


def _single(f_final: torch.Tensor, mlp: MLP) -> float:
    if f_final.dim() != 2:
        raise ShapeMismatch(f"expected a (tokens, d_model) matrix, got {tuple(f_final.shape)}")
    with torch.no_grad():
        return float(mlp(f_final))


def patch_score(f_final: torch.Tensor, mlp1: MLP) -> float:
    return _single(f_final, mlp1)


def patch_weight(f_final: torch.Tensor, mlp2: MLP) -> float:
    """Raw ``mlp2`` output through softplus plus ``WEIGHT_EPS``, so never below ``1e-6``."""
    return float(F.softplus(torch.tensor(_single(f_final, mlp2), dtype=torch.float64))) + WEIGHT_EPS


def aggregate(assessments: Sequence[PatchAssessment]) -> ImageDecision:
    """``sigmoid(sum(S * W) / sum(W))`` with a strict ``> 0.5`` decision."""
    if not assessments:
        raise EmptyInput("aggregate needs at least one patch")
    scores = np.array([a.score for a in assessments], dtype=np.float64)
    weights = np.array([a.weight for a in assessments], dtype=np.float64)
    if np.any(weights <= 0):
        raise ValueError("patch weights must be strictly positive")
    return ImageDecision.from_q(float(expit(np.dot(scores, weights) / weights.sum())))


def bce_loss(q_batch: Sequence[float], gt: Sequence[int]) -> float:
    """Mean binary cross-entropy with ``q`` clipped to ``[1e-7, 1 - 1e-7]``."""
    if len(q_batch) != len(gt):
        raise LengthMismatch(f"{len(q_batch)} predictions vs {len(gt)} labels")
    if not len(q_batch):
        raise EmptyInput("bce_loss needs at least one prediction")
    q = np.clip(np.asarray(q_batch, dtype=np.float64), Q_CLIP, 1.0 - Q_CLIP)
    y = np.asarray(gt, dtype=np.float64)
    return float(np.mean(-(y * np.log(q) + (1.0 - y) * np.log1p(-q))))
