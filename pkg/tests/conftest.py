from __future__ import annotations

import numpy as np
import pytest
from typer.testing import CliRunner

from jndscope.configuration.schema import TrainConfig
from jndscope.core import ImageBuffer
from jndscope.ingest import generate_synthetic


@pytest.fixture(autouse=True)
def isolate_config(tmp_path, monkeypatch):
    """Keep config lookup and run directories inside a temporary directory per test."""

    monkeypatch.delenv("JNDSCOPE_CONFIG", raising=False)
    monkeypatch.chdir(tmp_path)
    monkeypatch.setattr("jndscope.configuration.loader.detect_repo_root", lambda: None)
    monkeypatch.setattr("jndscope.cli.commands.config.detect_repo_root", lambda: tmp_path)
    yield


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


@pytest.fixture(scope="session")
def synthetic_index(tmp_path_factory):
    """Four synthetic 64x64 ladders (one per texture class), shared read-only."""
    root = tmp_path_factory.mktemp("synthetic") / "data"
    return generate_synthetic(7, 4, 64, root)


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    return TrainConfig.model_validate(
        {
            "lr": 1e-3,
            "batch_size": 8,
            "epochs": 2,
            "folds": 3,
            "n_patches": 2,
            "patch_size": 32,
            "levels_per_image": 2,
            "val_levels": 2,
            "backbone": {"channels": [4, 4, 4, 4, 4]},
            "fusion": {"d_model": 8, "heads": 2},
            "head": {"hidden": [8, 8]},
        }
    )


@pytest.fixture
def noise_image():
    def _make(height: int = 64, width: int = 64, channels: int = 3, seed: int = 0) -> ImageBuffer:
        rng = np.random.default_rng(seed)
        return ImageBuffer(rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8))

    return _make
