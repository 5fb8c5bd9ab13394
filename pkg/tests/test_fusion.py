from __future__ import annotations

import math
from dataclasses import replace

import pytest
import torch

from jndscope.backbone import extract_pyramid
from jndscope.configuration.schema import BackboneSpec
from jndscope.errors import ShapeMismatch
from jndscope.fusion import (
    CSALayer,
    FusedStage,
    PositionEncodingError,
    add_position_encoding,
    attention,
    attention_weights,
    build_fusion,
    cascade,
    csa_layer,
    diff_concat_pool,
    pool_stage,
    position_table,
    zero_value_paths,
)

WIDTHS = (4, 8, 16, 32, 64)
SIZES = (32, 16, 8, 4, 2)


def _stages(batch: int = 2, seed: int = 0):
    generator = torch.Generator().manual_seed(seed)
    ref = [torch.rand(batch, c, s, s, generator=generator) for c, s in zip(WIDTHS, SIZES)]
    dist = [torch.rand(batch, c, s, s, generator=generator) for c, s in zip(WIDTHS, SIZES)]
    return ref, dist


def _encoded(fusion, ref, dist):
    return [add_position_encoding(s) for s in fusion.pool_and_project(ref, dist)]


class TestAttention:
    def test_rows_sum_to_one(self):
        q, k = torch.randn(5, 8), torch.randn(7, 8)
        weights = attention_weights(q, k, 8)
        assert torch.allclose(weights.sum(dim=-1), torch.ones(5), atol=1e-6)

    def test_matches_softmax_formula(self):
        q, k, v = torch.randn(3, 4), torch.randn(6, 4), torch.randn(6, 2)
        expected = torch.softmax(q @ k.T / math.sqrt(4), dim=-1) @ v
        assert torch.allclose(attention(q, k, v, 4), expected, atol=1e-6)

    def test_large_scores_stay_finite(self):
        q = torch.full((2, 4), 1e4)
        k = torch.full((3, 4), 1e4)
        assert torch.isfinite(attention(q, k, torch.randn(3, 4), 4)).all()

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeMismatch):
            attention_weights(torch.randn(2, 4), torch.randn(2, 5), 4)


class TestPositionEncoding:
    def test_table_layout(self):
        table = position_table((2, 3), 8)
        assert table.shape == (6, 8)
        assert torch.allclose(table[0], torch.tensor([0, 0, 1, 1, 0, 0, 1, 1], dtype=torch.float32))
        # token 1 is row 0, column 1: only the column half moves
        assert torch.allclose(table[1, :4], table[0, :4])
        assert not torch.allclose(table[1, 4:], table[0, 4:])

    def test_rows_are_pairwise_distinct(self):
        table = position_table((8, 8), 16).double()
        distances = torch.cdist(table, table)
        off_diagonal = distances[~torch.eye(64, dtype=torch.bool)]
        assert float(off_diagonal.min()) > 1e-3

    def test_needs_multiple_of_four(self):
        with pytest.raises(ValueError):
            position_table((2, 2), 6)

    def test_counts_applications(self):
        stage = FusedStage(tokens=torch.zeros(4, 8), grid=(2, 2), scale=1)
        encoded = add_position_encoding(stage)
        assert encoded.position_count == 1
        assert torch.allclose(encoded.tokens, position_table((2, 2), 8))

    def test_token_count_must_match_grid(self):
        with pytest.raises(ShapeMismatch):
            FusedStage(tokens=torch.zeros(5, 8), grid=(2, 2), scale=1)


class TestFusion:
    def test_pool_stage_shape(self):
        ref, dist = torch.rand(2, 4, 16, 16), torch.rand(2, 4, 16, 16)
        pooled = pool_stage(ref, dist, (2, 2))
        assert pooled.shape == (2, 12, 2, 2)
        assert torch.allclose(pooled[:, 8:], pooled[:, :4] - pooled[:, 4:8], atol=1e-6)

    def test_forward_shape(self):
        fusion = build_fusion(WIDTHS, 16, heads=4, seed=0)
        ref, dist = _stages()
        assert fusion(ref, dist).shape == (2, 4, 16)

    def test_parameter_names(self):
        names = set(build_fusion(WIDTHS, 8).state_dict())
        assert {"proj1.weight", "proj5.bias", "stage4.Wq.weight", "final.Wv.weight"} <= names

    def test_seeded_build_is_reproducible(self):
        a, b = build_fusion(WIDTHS, 8, seed=3), build_fusion(WIDTHS, 8, seed=3)
        assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))

    def test_cascade_requires_single_position_encoding(self):
        fusion = build_fusion(WIDTHS, 8)
        ref, dist = _stages()
        raw = fusion.pool_and_project(ref, dist)
        with pytest.raises(PositionEncodingError):
            fusion.cascade(raw)
        with pytest.raises(PositionEncodingError):
            fusion.cascade([add_position_encoding(add_position_encoding(s)) for s in raw])

    def test_zero_value_paths_leave_the_residual(self):
        fusion = build_fusion(WIDTHS, 8, heads=2)
        zero_value_paths(fusion)
        ref, dist = _stages()
        stages = _encoded(fusion, ref, dist)
        with torch.no_grad():
            assert torch.allclose(fusion.cascade(stages), stages[-1].tokens)

    def test_without_csa_uses_finest_stage(self):
        fusion = build_fusion(WIDTHS, 8, use_csa=False)
        ref, dist = _stages()
        stages = _encoded(fusion, ref, dist)
        assert torch.equal(fusion.cascade(stages), stages[0].tokens)

    def test_layer_norm_normalises_tokens(self):
        layer = CSALayer(8, heads=1, layer_norm=True)
        out = layer(torch.randn(4, 8), torch.randn(6, 8))
        assert torch.allclose(out.mean(dim=-1), torch.zeros(4), atol=1e-5)


class TestSinglePatch:
    def test_diff_concat_pool_and_cascade(self, noise_image):
        spec = BackboneSpec(channels=WIDTHS)
        ref = extract_pyramid(noise_image(32, 32), spec)
        dist = extract_pyramid(noise_image(32, 32, seed=1), spec)
        fusion = build_fusion(WIDTHS, 8)
        stages = diff_concat_pool(ref, dist, fusion)
        assert len(stages) == 5
        assert all(stage.tokens.shape == (4, 8) and stage.grid == (2, 2) for stage in stages)
        assert [stage.scale for stage in stages] == [1, 2, 3, 4, 5]
        with torch.no_grad():
            out = cascade([add_position_encoding(s) for s in stages], fusion)
        assert out.shape == (4, 8)

    def test_csa_layer_keeps_query_geometry(self):
        query = FusedStage(tokens=torch.randn(4, 8), grid=(2, 2), scale=5, position_count=1)
        kv = FusedStage(tokens=torch.randn(4, 8), grid=(2, 2), scale=4, position_count=1)
        out = csa_layer(query, kv, CSALayer(8))
        assert out.scale == 5 and out.tokens.shape == (4, 8)
        other = FusedStage(tokens=torch.randn(1, 8), grid=(1, 1), scale=4)
        with pytest.raises(ShapeMismatch):
            csa_layer(query, other, CSALayer(8))

    def test_csa_layer_ignores_key_value_order(self):
        torch.manual_seed(0)
        query = FusedStage(tokens=torch.randn(4, 8), grid=(2, 2), scale=5, position_count=1)
        tokens = torch.randn(4, 8)
        kv = FusedStage(tokens=tokens, grid=(2, 2), scale=4, position_count=1)
        shuffled = FusedStage(tokens=tokens[[2, 0, 3, 1]], grid=(2, 2), scale=4, position_count=1)
        for heads in (1, 2):
            layer = CSALayer(8, heads=heads)
            with torch.no_grad():
                expected = csa_layer(query, kv, layer).tokens
                assert torch.allclose(csa_layer(query, shuffled, layer).tokens, expected, atol=1e-6)

    def test_single_head_layer_is_plain_attention(self):
        torch.manual_seed(1)
        layer = CSALayer(8, heads=1)
        query, kv = torch.randn(4, 8), torch.randn(6, 8)
        with torch.no_grad():
            q, k, v = layer.Wq(query), layer.Wk(kv), layer.Wv(kv)
            expected = torch.softmax(q @ k.T / math.sqrt(8), dim=-1) @ v + query
            assert torch.allclose(layer(query, kv), expected, atol=1e-6)

    def test_cascade_depends_on_stage_order(self):
        fusion = build_fusion(WIDTHS, 8, heads=2, seed=0)
        ref, dist = _stages(batch=1)
        stages = [
            add_position_encoding(replace(s, tokens=s.tokens[0]))
            for s in fusion.pool_and_project(ref, dist)
        ]
        swapped = [stages[3], stages[1], stages[2], stages[0], stages[4]]
        with torch.no_grad():
            assert not torch.allclose(cascade(stages, fusion), cascade(swapped, fusion), atol=1e-4)
