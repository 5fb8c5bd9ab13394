from __future__ import annotations

import numpy as np
import pytest
import torch

from jndscope.backbone import (
    RESNET50_WIDTHS,
    Backbone,
    ResNet50Stages,
    ShapeError,
    WeightLoadError,
    extract_pyramid,
    image_to_tensor,
    resolve_weights,
    stage_widths_from_state_dict,
)
from jndscope.configuration.schema import BackboneSpec
from jndscope.core import ImageBuffer

TOY = BackboneSpec(channels=(4, 8, 16, 32, 64))


class TestToyBackbone:
    def test_pyramid_shapes(self, noise_image):
        pyramid = extract_pyramid(noise_image(32, 32), TOY)
        assert pyramid.widths == (4, 8, 16, 32, 64)
        assert pyramid.sizes == ((32, 32), (16, 16), (8, 8), (4, 4), (2, 2))
        assert pyramid.stage_meta == (1, 2, 4, 8, 16)

    def test_strided_first_stage(self, noise_image):
        spec = TOY.model_copy(update={"stage1_stride": 2})
        pyramid = extract_pyramid(noise_image(64, 32), spec)
        assert pyramid.sizes[0] == (32, 16)
        assert pyramid.sizes[-1] == (2, 1)

    def test_patch_size_must_divide(self, noise_image):
        with pytest.raises(ShapeError):
            extract_pyramid(noise_image(40, 32), TOY)

    def test_same_seed_same_features(self, noise_image):
        patch = noise_image(32, 32)
        a = extract_pyramid(patch, TOY)
        b = extract_pyramid(patch, TOY)
        assert all(torch.equal(x, y) for x, y in zip(a.stages, b.stages))

    def test_black_patch_gives_zero_pyramid(self):
        pyramid = extract_pyramid(ImageBuffer(np.zeros((32, 32, 3), dtype=np.uint8)), TOY)
        assert all(not stage.any() for stage in pyramid.stages)

    def test_translation_moves_features_with_the_content(self, noise_image):
        block = noise_image(16, 16).pixels
        canvas = np.zeros((128, 128, 3), dtype=np.uint8)
        moved = canvas.copy()
        canvas[56:72, 56:72] = block
        moved[72:88, 72:88] = block
        original = extract_pyramid(ImageBuffer(canvas), TOY)
        shifted = extract_pyramid(ImageBuffer(moved), TOY)
        for stage, a, b in zip(original.stage_meta, original.stages, shifted.stages):
            step = 16 // stage
            assert torch.allclose(b[:, step:, step:], a[:, :-step, :-step], atol=1e-5)

    def test_frozen_backbone_has_no_trainable_parameters(self):
        backbone = Backbone(TOY)
        assert not any(p.requires_grad for p in backbone.parameters())
        assert backbone.ships_with_checkpoint
        backbone.train()
        assert not backbone.net.training

    def test_unfrozen_backbone_trains(self):
        backbone = Backbone(TOY.model_copy(update={"frozen": False}))
        assert all(p.requires_grad for p in backbone.net.parameters())


def test_image_to_tensor_replicates_gray(noise_image):
    tensor = image_to_tensor([noise_image(8, 8, channels=1)])
    assert tensor.shape == (1, 3, 8, 8)
    assert torch.equal(tensor[0, 0], tensor[0, 2])
    assert float(tensor.max()) <= 1.0


class TestResNet:
    def test_stage_shapes_without_weights(self):
        spec = BackboneSpec(kind="PRETRAINED_RESNET50")
        backbone = Backbone(spec, load_weights=False)
        with torch.no_grad():
            stages = backbone(torch.rand(1, 3, 64, 64))
        assert tuple(s.shape[1] for s in stages) == RESNET50_WIDTHS
        assert tuple(s.shape[-1] for s in stages) == (32, 16, 8, 4, 2)
        assert not backbone.ships_with_checkpoint

    def test_widths_read_from_state_dict(self):
        assert stage_widths_from_state_dict(ResNet50Stages().state_dict()) == RESNET50_WIDTHS

    def test_foreign_state_dict_rejected(self):
        with pytest.raises(WeightLoadError):
            stage_widths_from_state_dict({"weight": torch.zeros(1)})

    def test_missing_weights_file(self, tmp_path):
        spec = BackboneSpec(kind="PRETRAINED_RESNET50", weights_path=str(tmp_path / "nope.pth"))
        with pytest.raises(WeightLoadError):
            Backbone(spec)

    def test_hub_download_used_without_path(self, mocker, tmp_path):
        download = mocker.patch(
            "huggingface_hub.hf_hub_download", return_value=str(tmp_path / "w.safetensors")
        )
        path = resolve_weights(BackboneSpec(kind="PRETRAINED_RESNET50", hub_repo="org/resnet"))
        download.assert_called_once_with(repo_id="org/resnet", filename="model.safetensors")
        assert path.name == "w.safetensors"

    def test_hub_failure_is_a_weight_error(self, mocker):
        mocker.patch("huggingface_hub.hf_hub_download", side_effect=OSError("offline"))
        with pytest.raises(WeightLoadError, match="offline"):
            resolve_weights(BackboneSpec(kind="PRETRAINED_RESNET50"))
