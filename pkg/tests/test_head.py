from __future__ import annotations

import math

import pytest
import torch

from jndscope.errors import EmptyInput, LengthMismatch, ShapeMismatch
from jndscope.head import (
    MLP,
    ImageDecision,
    PatchAssessment,
    PredictionHead,
    aggregate,
    bce_loss,
    WEIGHT_EPS,
    bce_torch,
    patch_score,
    patch_weight,
    zero_output_layer,
)


class TestAggregate:
    def test_weighted_mean_through_sigmoid(self):
        decision = aggregate([PatchAssessment(1.0, 1.0), PatchAssessment(-0.5, 1.0)])
        assert decision.q_dist == pytest.approx(0.5622, abs=1e-4)
        assert decision.label == 1

    def test_weights_shift_the_decision(self):
        decision = aggregate([PatchAssessment(1.0, 1.0), PatchAssessment(-0.5, 3.0)])
        assert decision.q_dist == pytest.approx(1.0 / (1.0 + math.exp(0.125)))
        assert decision.label == 0

    def test_half_is_lossless(self):
        assert aggregate([PatchAssessment(0.0, 2.0)]).label == 0
        assert ImageDecision.from_q(0.5).label == 0

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 1e3])
    def test_weight_scale_invariance(self, scale):
        base = aggregate([PatchAssessment(2.0, 0.3), PatchAssessment(-1.0, 0.9)])
        scaled = aggregate([PatchAssessment(2.0, 0.3 * scale), PatchAssessment(-1.0, 0.9 * scale)])
        assert scaled.q_dist == pytest.approx(base.q_dist, abs=1e-9)

    def test_patch_order_does_not_matter(self):
        pairs = [(2.0, 0.3), (-1.0, 0.9), (0.4, 1.7), (-0.2, 0.05)]
        assessments = [PatchAssessment(score, weight) for score, weight in pairs]
        base = aggregate(assessments)
        for order in ([3, 1, 0, 2], [2, 3, 1, 0], [1, 0, 3, 2]):
            shuffled = aggregate([assessments[i] for i in order])
            assert shuffled.q_dist == pytest.approx(base.q_dist, abs=1e-12)
            assert shuffled.label == base.label

    def test_empty(self):
        with pytest.raises(EmptyInput):
            aggregate([])

    def test_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            aggregate([PatchAssessment(1.0, 0.0)])

    def test_assessment_must_be_finite(self):
        with pytest.raises(ValueError):
            PatchAssessment(float("nan"), 1.0)


class TestLoss:
    def test_reference_value(self):
        assert bce_loss([0.9, 0.8], [1, 1]) == pytest.approx(0.1643, abs=1e-4)

    def test_half_probability_is_ln2(self):
        assert bce_loss([0.5, 0.5], [0, 1]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_extremes_are_clipped(self):
        loss = bce_loss([0.0, 1.0], [1, 0])
        assert math.isfinite(loss)
        assert loss == pytest.approx(-math.log(1e-7), rel=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            bce_loss([0.5], [0, 1])
        with pytest.raises(EmptyInput):
            bce_loss([], [])

    def test_torch_loss_agrees(self):
        q, gt = [0.2, 0.7, 0.9], [0, 1, 1]
        torch_value = float(bce_torch(torch.tensor(q, dtype=torch.float64), torch.tensor(gt)))
        assert torch_value == pytest.approx(bce_loss(q, gt), rel=1e-9)


class TestBranches:
    def test_mlp_pools_tokens(self):
        mlp = MLP(8, hidden=(4, 4))
        tokens = torch.randn(3, 5, 6, 8)
        assert mlp(tokens).shape == (3, 5)
        with pytest.raises(ShapeMismatch):
            mlp(torch.randn(4, 7))

    def test_patch_weight_is_positive(self):
        mlp = MLP(8, hidden=(4, 4))
        zero_output_layer(mlp)
        with torch.no_grad():
            mlp.output_layer.bias.fill_(-50.0)
        weight = patch_weight(torch.randn(4, 8), mlp)
        assert weight == pytest.approx(WEIGHT_EPS, rel=1e-9)

    def test_zeroed_weight_branch_is_ln2(self):
        mlp = MLP(8, hidden=(4, 4))
        zero_output_layer(mlp)
        assert patch_weight(torch.randn(4, 8), mlp) == pytest.approx(math.log(2.0) + WEIGHT_EPS)

    def test_underflowing_weights_keep_q_finite(self):
        torch.manual_seed(0)
        head = PredictionHead(8, hidden=(4, 4))
        with torch.no_grad():
            head.mlp2.output_layer.weight.zero_()
            head.mlp2.output_layer.bias.fill_(-200.0)
        q, scores, weights = head(torch.randn(1, 3, 4, 8))
        assert torch.allclose(weights, torch.full((1, 3), WEIGHT_EPS))
        assert bool(torch.isfinite(q).all())
        assert bool(((q > 0) & (q < 1)).all())
        assert torch.allclose(q, torch.sigmoid(scores.mean(dim=-1)), atol=1e-6)
        assert math.isfinite(float(bce_torch(q, torch.ones(1))))

    def test_patch_score_expects_token_matrix(self):
        mlp = MLP(8, hidden=(4, 4))
        assert isinstance(patch_score(torch.randn(4, 8), mlp), float)
        with pytest.raises(ShapeMismatch):
            patch_score(torch.randn(1, 4, 8), mlp)

    def test_head_outputs(self):
        head = PredictionHead(8, hidden=(4, 4))
        q, scores, weights = head(torch.randn(2, 3, 4, 8))
        assert q.shape == (2,) and scores.shape == (2, 3) and weights.shape == (2, 3)
        assert bool(((q > 0) & (q < 1)).all())
        assert bool((weights > 0).all())

    def test_uniform_weights_when_disabled(self):
        head = PredictionHead(8, hidden=(4, 4), use_patch_weight=False)
        q, scores, weights = head(torch.randn(1, 3, 4, 8))
        assert torch.equal(weights, torch.ones(1, 3))
        assert torch.allclose(q, torch.sigmoid(scores.mean(dim=-1)))

    def test_zeroed_score_branch_is_undecided(self):
        head = PredictionHead(8, hidden=(4, 4))
        zero_output_layer(head.mlp1)
        q, _, _ = head(torch.randn(2, 3, 4, 8))
        assert torch.allclose(q, torch.full((2,), 0.5))
