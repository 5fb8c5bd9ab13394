"""Build compression ladders and the dataset index for a run."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import typer

from jndscope.gev import write_gev_csv
from jndscope.ingest import (
    INDEX_FILE,
    CodecRecipe,
    DatasetIndex,
    generate_synthetic,
    load_dataset,
    prepare_ladders,
    resolve_targets,
)
from jndscope.logging import step_progress
from jndscope.manifest import write_manifest
from jndscope import ui

from ..common import COMMAND_CONTEXT, config_option, handle_errors, resolve_config, run_directory
from ..type_defs import CommandMap

DATA_DIR = "data"
GEV_CSV = "gev_fits.csv"
ANNOTATION_FILES = ("jnd.csv", "annotations.csv")


def register(app: typer.Typer) -> CommandMap:
    @app.command(context_settings=COMMAND_CONTEXT)
    @handle_errors
    def prepare(
        config: Optional[Path] = config_option(),
        seed: Optional[int] = typer.Option(None, "--seed", help="Synthetic generator seed."),
        count: Optional[int] = typer.Option(None, "--count", help="Synthetic image count."),
        size: Optional[int] = typer.Option(None, "--size", help="Synthetic image side in pixels."),
        workers: Optional[int] = typer.Option(None, "--workers", "-w", help="Ladder worker threads."),
    ) -> None:
        """Build ladders and the dataset index (synthetic or from a dataset root)."""
        cfg = resolve_config(
            config,
            [
                ("dataset.synthetic.seed", seed),
                ("dataset.synthetic.count", count),
                ("dataset.synthetic.size", size),
                ("run.workers", workers),
            ],
        )
        run = run_directory(cfg)
        data_dir = run / DATA_DIR
        dataset = cfg.dataset
        codec = CodecRecipe(
            codec_id=dataset.codec.codec_id, level_range=dataset.codec.level_range
        ).to_spec()
        inputs: List[Path] = []
        if dataset.layout == "SYNTHETIC":
            synthetic = dataset.synthetic
            with step_progress("Generating synthetic ladders", synthetic.count) as progress:
                index = generate_synthetic(
                    synthetic.seed,
                    synthetic.count,
                    synthetic.size,
                    data_dir,
                    workers=cfg.run.workers,
                    codec=codec,
                    threshold_db=synthetic.threshold_db,
                    progress_callback=progress.callback(),
                )
        else:
            root = Path(dataset.root or "")
            source = load_dataset(root, dataset.layout, codec=codec)
            source, rows = resolve_targets(
                source, quantile=dataset.gev.quantile, min_samples=dataset.gev.min_samples
            )
            if rows:
                write_gev_csv(rows, run / GEV_CSV)
            inputs = [root / name for name in ANNOTATION_FILES if (root / name).is_file()]
            with step_progress("Writing ladders", len(source)) as progress:
                index = prepare_ladders(
                    source,
                    data_dir,
                    workers=cfg.run.workers,
                    progress_callback=progress.callback(),
                )
        write_manifest(
            run,
            "prepare",
            config=cfg.to_dict(),
            seeds={"synthetic": dataset.synthetic.seed},
            inputs=[*inputs, data_dir / INDEX_FILE],
        )
        _summarize(index)
        ui.success(f"Prepared {len(index)} ladders in {data_dir}")

    return {"prepare": prepare}


def _summarize(index: DatasetIndex) -> None:
    rows = [
        (
            record.image_id,
            record.jnd_target,
            record.texture.value if record.texture else "-",
            f"{record.oracle_threshold_db:.2f}" if record.oracle_threshold_db is not None else "-",
        )
        for record in index.records
    ]
    ui.print_table(("image", "jnd target", "texture", "oracle dB"), rows, title="Dataset")
