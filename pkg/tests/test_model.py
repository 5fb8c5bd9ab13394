from __future__ import annotations

import numpy as np
import pytest
import torch

from jndscope.core import ImageBuffer
from jndscope.errors import ShapeMismatch
from jndscope.model import (
    Classifier,
    JNDNet,
    NetworkClassifier,
    PsnrThresholdClassifier,
    pairs_to_tensors,
)
from jndscope.patcher import extract_patches


def _inputs(config, batch=2, seed=0):
    generator = torch.Generator().manual_seed(seed)
    shape = (batch, config.n_patches, 3, config.patch_size, config.patch_size)
    return torch.rand(shape, generator=generator), torch.rand(shape, generator=generator)


def test_forward_shapes(tiny_train_config):
    net = JNDNet(tiny_train_config)
    q, scores, weights = net(*_inputs(tiny_train_config))
    assert q.shape == (2,)
    assert scores.shape == weights.shape == (2, tiny_train_config.n_patches)
    assert bool(((q > 0) & (q < 1)).all())


def test_rejects_mismatched_stacks(tiny_train_config):
    net = JNDNet(tiny_train_config)
    ref, dist = _inputs(tiny_train_config)
    with pytest.raises(ShapeMismatch):
        net(ref, dist[:1])
    with pytest.raises(ShapeMismatch):
        net(ref[0], dist[0])


def test_seed_fixes_initialisation(tiny_train_config):
    a, b = JNDNet(tiny_train_config), JNDNet(tiny_train_config)
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


def test_frozen_backbone_gets_no_gradient(tiny_train_config):
    net = JNDNet(tiny_train_config)
    q, _, _ = net(*_inputs(tiny_train_config))
    q.sum().backward()
    assert all(p.grad is None for p in net.backbone.parameters())
    assert net.head.mlp1.output_layer.weight.grad is not None


def test_trainable_state_round_trip(tiny_train_config):
    net = JNDNet(tiny_train_config).eval()
    other = JNDNet(tiny_train_config.model_copy(update={"seed": 99})).eval()
    inputs = _inputs(tiny_train_config)
    other.load_trainable_state(net.trainable_state())
    with torch.no_grad():
        assert torch.allclose(net(*inputs)[0], other(*inputs)[0], atol=1e-6)


def test_frozen_pretrained_backbone_left_out_of_state(tiny_train_config):
    config = tiny_train_config.model_copy(
        update={"backbone": tiny_train_config.backbone.model_copy(update={"kind": "PRETRAINED_RESNET50"})}
    )
    net = JNDNet(config, load_weights=False)
    state = net.trainable_state()
    assert state and not any(key.startswith("backbone.") for key in state)
    net.load_trainable_state(state)


def test_incompatible_state_rejected(tiny_train_config):
    net = JNDNet(tiny_train_config)
    state = net.trainable_state()
    state.pop("head.mlp1.layers.0.weight")
    with pytest.raises(ShapeMismatch):
        net.load_trainable_state(state)


def test_network_classifier_decides(tiny_train_config, noise_image):
    ref, dist = noise_image(64, 64), noise_image(64, 64, seed=1)
    pairs = extract_patches(ref, dist, tiny_train_config.n_patches, 32, rng_seed=0)
    classifier = NetworkClassifier(JNDNet(tiny_train_config))
    assert isinstance(classifier, Classifier)
    decision = classifier.decide(ref, dist, pairs)
    assert decision.label == int(decision.q_dist > 0.5)
    ref_t, dist_t = pairs_to_tensors(pairs)
    assert ref_t.shape == (1, tiny_train_config.n_patches, 3, 32, 32)
    assert not torch.equal(ref_t, dist_t)


def test_psnr_threshold_classifier(noise_image):
    ref = noise_image(16, 16)
    noisy = ImageBuffer(np.clip(ref.pixels.astype(int) + 40, 0, 255))
    classifier = PsnrThresholdClassifier(30.0)
    assert isinstance(classifier, Classifier)
    assert not classifier.uses_patches
    assert classifier.decide(ref, ref).label == 0
    assert classifier.decide(ref, noisy).label == 1
