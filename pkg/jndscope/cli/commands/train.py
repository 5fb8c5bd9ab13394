"""Train one cross-validation fold."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer

from jndscope import ui
from jndscope.ingest import INDEX_FILE, DatasetIndex
from jndscope.logging import console, step_progress
from jndscope.manifest import write_manifest
from jndscope.trainer import MODEL_FILE, SIDECAR_FILE, TRAIN_LOG, EpochLog, train

from ..common import COMMAND_CONTEXT, config_option, handle_errors, resolve_config, run_directory
from ..type_defs import CommandMap
from .prepare import DATA_DIR

FOLDS_DIR = "folds"


def fold_dir(run: Path, fold: int) -> Path:
    return run / FOLDS_DIR / f"fold{fold}"


def register(app: typer.Typer) -> CommandMap:
    @app.command(name="train", context_settings=COMMAND_CONTEXT)
    @handle_errors
    def train_fold(
        config: Optional[Path] = config_option(),
        fold: Optional[int] = typer.Option(None, "--fold", "-f", help="Fold to train (0-based)."),
        epochs: Optional[int] = typer.Option(None, "--epochs", help="Override train.epochs."),
        seed: Optional[int] = typer.Option(None, "--seed", help="Override train.seed."),
        index: Optional[Path] = typer.Option(
            None, "--index", help="Dataset index (default: <run>/data/index.json).", dir_okay=False
        ),
    ) -> None:
        """Train one fold and write its checkpoint and training log."""
        cfg = resolve_config(
            config, [("train.fold", fold), ("train.epochs", epochs), ("train.seed", seed)]
        )
        run = run_directory(cfg)
        index_path = index or run / DATA_DIR / INDEX_FILE
        dataset = DatasetIndex.load(index_path)
        out_dir = fold_dir(run, cfg.train.fold)
        with step_progress(f"Training fold {cfg.train.fold}", cfg.train.epochs) as progress:

            def _on_epoch(phase: str, epoch: int, total: int, log: Optional[EpochLog]) -> None:
                if phase == "end" and log is not None:
                    progress.advance(f"epoch {epoch}: train {log.train_bce:.4f} val {log.val_bce:.4f}")

            checkpoint = train(
                cfg.train, cfg.train.fold, dataset, out_dir=out_dir, progress_callback=_on_epoch
            )
        write_manifest(
            run,
            f"train.fold{cfg.train.fold}",
            config=cfg.to_dict(),
            seeds={"train": cfg.train.seed},
            inputs=[index_path, out_dir / MODEL_FILE, out_dir / SIDECAR_FILE, out_dir / TRAIN_LOG],
        )
        console.print(
            f"[section]best epoch[/] [metric]{checkpoint.epoch}[/] "
            f"[muted]val BCE[/] [metric]{checkpoint.val_bce:.4f}[/] "
            f"[muted]train BCE[/] [metric]{checkpoint.train_bce:.4f}[/]"
        )
        ui.success(f"Checkpoint written to {out_dir}")

    return {"train": train_fold}
