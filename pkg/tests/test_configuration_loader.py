from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from jndscope.configuration import loader as loader_module
from jndscope.configuration.defaults import DEFAULT_CONFIG_DICT
from jndscope.configuration.errors import ConfigurationError, InvalidConfig
from jndscope.configuration.schema import (
    CodecConfig,
    DatasetConfig,
    FusionConfig,
    JndscopeConfig,
    RunConfig,
    SearchConfig,
    TrainConfig,
)

try:
    import tomllib
except ImportError:  # pragma: no cover
    import tomli as tomllib


def test_locate_prefers_env_over_repo(tmp_path, monkeypatch):
    repo_root = tmp_path / "repo"
    repo_config = repo_root / "configs" / "config.toml"
    repo_config.parent.mkdir(parents=True)
    repo_config.write_text("", encoding="utf-8")
    env_config = tmp_path / "custom.toml"
    env_config.write_text("", encoding="utf-8")

    monkeypatch.setattr(loader_module, "detect_repo_root", lambda: repo_root)
    assert loader_module.locate_config_file() == repo_config.resolve()

    monkeypatch.setenv(loader_module.ENV_CONFIG, str(env_config))
    assert loader_module.locate_config_file() == env_config.resolve()


def test_locate_env_missing_file(tmp_path, monkeypatch):
    monkeypatch.setenv(loader_module.ENV_CONFIG, str(tmp_path / "absent.toml"))
    with pytest.raises(ConfigurationError):
        loader_module.locate_config_file()


def test_locate_without_any_config():
    assert loader_module.locate_config_file() is None
    assert loader_module.load_config() == JndscopeConfig()


def test_merge_configs_is_deep_and_pure():
    base = {"train": {"lr": 1e-4, "search": {"window": 6, "threshold": 5}}}
    merged = loader_module.merge_configs(base, {"train": {"search": {"window": 3}}})
    assert merged == {"train": {"lr": 1e-4, "search": {"window": 3, "threshold": 5}}}
    assert base["train"]["search"]["window"] == 6


def test_collect_overrides_skips_unset_flags():
    overrides = loader_module.collect_overrides(
        [("train.search.window", 3), ("train.epochs", None), ("train.seed", 4)]
    )
    assert overrides == {"train": {"search": {"window": 3}, "seed": 4}}
    with pytest.raises(ConfigurationError):
        loader_module.dotted_override("..", 1)


def test_load_config_layers_file_and_overrides(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text('[train]\nepochs = 3\n\n[train.search]\nstrategy = "NAIVE"\n', encoding="utf-8")
    config = loader_module.load_config(path, overrides={"train": {"seed": 9}})
    assert config.train.epochs == 3
    assert config.train.search.strategy == "NAIVE"
    assert config.train.seed == 9
    assert config.train.lr == DEFAULT_CONFIG_DICT["train"]["lr"]


def test_load_config_reads_json(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"run": {"name": "exp1"}}), encoding="utf-8")
    assert loader_module.load_config(path).run.name == "exp1"


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("[train]\nlearning_rate = 0.1\n", encoding="utf-8")
    with pytest.raises(ConfigurationError) as excinfo:
        loader_module.load_config(path)
    assert "train.learning_rate" in str(excinfo.value)


def test_load_config_rejects_bad_toml(tmp_path):
    path = tmp_path / "config.toml"
    path.write_text("[train\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        loader_module.load_config(path)


def test_load_config_missing_explicit_path(tmp_path):
    with pytest.raises(ConfigurationError):
        loader_module.load_config(tmp_path / "absent.toml")


def test_render_toml_round_trips_defaults():
    text = loader_module.render_toml()
    assert text.startswith("# jndscope configuration")
    parsed = tomllib.loads(text)
    assert JndscopeConfig.from_dict(parsed) == JndscopeConfig()


def test_to_dict_round_trip():
    config = loader_module.load_config(overrides={"dataset": {"layout": "MCL_JCI", "root": "data"}})
    assert JndscopeConfig.from_dict(config.to_dict()) == config


class TestSchema:
    @pytest.mark.parametrize("name", ["", "a/b", "..", "x\\y"])
    def test_run_name_is_one_component(self, name):
        with pytest.raises(ValidationError):
            RunConfig(name=name)

    def test_codec_range(self):
        CodecConfig(codec_id="GENERIC", level_range=(0, 500))
        with pytest.raises(ValidationError):
            CodecConfig(level_range=(0, 100))
        with pytest.raises(ValidationError):
            CodecConfig(level_range=(50, 10))

    def test_dataset_root_required_for_real_layouts(self):
        DatasetConfig()
        with pytest.raises(ValidationError):
            DatasetConfig(layout="KONJND_1K")

    @pytest.mark.parametrize(("d_model", "heads"), [(18, 2), (16, 3)])
    def test_fusion_dimensions(self, d_model, heads):
        with pytest.raises(ValidationError):
            FusionConfig(d_model=d_model, heads=heads)

    def test_window_threshold_bound(self):
        SearchConfig(window=6, threshold=7)
        SearchConfig(strategy="NAIVE", window=0, threshold=5)
        with pytest.raises(ValidationError):
            SearchConfig(window=6, threshold=8)

    def test_train_constraints(self):
        with pytest.raises(ValidationError):
            TrainConfig(patch_size=48)
        with pytest.raises(ValidationError):
            TrainConfig(folds=3, fold=3)
        with pytest.raises(ValidationError):
            TrainConfig(folds=2)

    def test_defaults_fit_the_synthetic_images(self):
        config = JndscopeConfig()
        capacity = (config.dataset.synthetic.size // config.train.patch_size) ** 2
        assert capacity >= config.train.n_patches
        assert config.dataset.synthetic.count >= config.train.folds

    def test_synthetic_patches_must_fit(self):
        with pytest.raises(ValidationError) as excinfo:
            JndscopeConfig.from_dict({"dataset": {"synthetic": {"size": 64}}})
        assert "train.n_patches" in str(excinfo.value)
        JndscopeConfig.from_dict(
            {"dataset": {"synthetic": {"size": 64}}, "train": {"n_patches": 4, "patch_size": 32}}
        )

    def test_synthetic_count_covers_folds(self):
        with pytest.raises(ValidationError) as excinfo:
            JndscopeConfig.from_dict({"dataset": {"synthetic": {"count": 4}}})
        assert "folds" in str(excinfo.value)
        JndscopeConfig.from_dict({"dataset": {"synthetic": {"count": 4}}, "train": {"folds": 4}})

    def test_real_layouts_skip_synthetic_checks(self):
        JndscopeConfig.from_dict(
            {"dataset": {"layout": "LADDER_DIR", "root": "data", "synthetic": {"count": 1, "size": 32}}}
        )

    def test_load_config_reports_cross_section_errors(self):
        with pytest.raises(InvalidConfig) as excinfo:
            loader_module.load_config(overrides={"dataset": {"synthetic": {"count": 4}}})
        message = str(excinfo.value)
        assert message.startswith("dataset.synthetic.count: 4 images")
        assert "\n" not in message
