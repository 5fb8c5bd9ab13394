"""Built-in default configuration for jndscope.

Training defaults: Adam at 1e-4 decayed
by 0.8 every 10 epochs for 50 epochs, 10-fold cross-validation, 16 patches
of 64x64 pixels and a (6, 5) sliding window for JPEG ladders. Synthetic
images default to 256x256 so those 16 patches tile them without overlap.
"""

from __future__ import annotations

DEFAULT_CONFIG_DICT = {
    "meta": {
        "version": "1.0",
    },
    "run": {
        "root": "runs",
        "name": "default",
        "workers": 1,
    },
    "dataset": {
        "layout": "SYNTHETIC",
        "codec": {"codec_id": "JPEG", "level_range": [1, 100]},
        "synthetic": {
            "seed": 7,
            "count": 16,
            "size": 256,
            "threshold_db": [30.0, 42.0],
        },
        "gev": {"quantile": 0.5, "min_samples": 5},
    },
    "train": {
        "lr": 1e-4,
        "batch_size": 16,
        "epochs": 50,
        "lr_decay": 0.8,
        "lr_step": 10,
        "folds": 10,
        "fold": 0,
        "seed": 0,
        "n_patches": 16,
        "patch_size": 64,
        "levels_per_image": 8,
        "boundary_band": 10,
        "boundary_fraction": 0.5,
        "val_levels": 8,
        "backbone": {
            "kind": "TOY_CNN",
            "hub_repo": "timm/resnet50.tv_in1k",
            "hub_filename": "model.safetensors",
            "frozen": True,
            "channels": [8, 16, 32, 64, 128],
            "stage1_stride": 1,
            "init_seed": 0,
        },
        "fusion": {
            "d_model": 256,
            "heads": 4,
            "use_csa": True,
            "layer_norm": False,
        },
        "head": {
            "hidden": [128, 64],
            "use_patch_weight": True,
        },
        "search": {
            "strategy": "WINDOW",
            "window": 6,
            "threshold": 5,
        },
    },
    "eval": {
        "luma_only": False,
    },
}

# Inline comments written into `jndscope config init` output.
SECTION_COMMENTS = {
    "meta": "Schema version of this file.",
    "run": "Run directory <root>/<name>/ and worker pool size.",
    "dataset": "Dataset layout (SYNTHETIC, LADDER_DIR, MCL_JCI, KONJND_1K) and codec.",
    "train": "Training protocol, network shape and JND search parameters.",
    "eval": "Metric options.",
}
