"""Predict JND levels for ladders with a checkpoint or the PSNR oracle."""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Optional, Tuple

import typer

from jndscope import ui
from jndscope.core import CompressionLadder, load_ladder, read_ladder_manifest
from jndscope.ingest import DatasetIndex, materialize_ladder
from jndscope.logging import step_progress
from jndscope.manifest import write_manifest
from jndscope.model import Classifier, PsnrThresholdClassifier
from jndscope.patcher import dump_rectangles, sample_origins
from jndscope.search import SearchSpec
from jndscope.trainer import Checkpoint, as_classifier, load_checkpoint, predict_image

from ..common import COMMAND_CONTEXT, config_option, handle_errors, resolve_config, run_directory
from ..type_defs import CommandMap
from .prepare import DATA_DIR

PREDICTIONS_DIR = "predictions"
SUBSETS = ("test", "val", "train", "all")


def register(app: typer.Typer) -> CommandMap:
    @app.command(context_settings=COMMAND_CONTEXT)
    @handle_errors
    def predict(
        config: Optional[Path] = config_option(),
        ckpt: Optional[Path] = typer.Option(
            None, "--ckpt", help="Checkpoint directory from 'jndscope train'.",
            exists=True, file_okay=False,
        ),
        oracle: bool = typer.Option(
            False, "--oracle", help="Use each ladder's stored PSNR threshold instead of a network."
        ),
        oracle_db: Optional[float] = typer.Option(
            None, "--oracle-db", help="Fixed PSNR threshold (dB) for the oracle classifier."
        ),
        ladders: Optional[List[Path]] = typer.Option(
            None, "--ladder", "-l", help="Ladder directory (repeatable).",
            exists=True, file_okay=False,
        ),
        index: Optional[Path] = typer.Option(
            None, "--index", help="Predict the records of a dataset index.", dir_okay=False
        ),
        subset: Optional[str] = typer.Option(
            None, "--subset", help="With --index and --ckpt: test, val, train or all (default test)."
        ),
        strategy: Optional[str] = typer.Option(None, "--strategy", help="NAIVE or WINDOW."),
        window: Optional[int] = typer.Option(None, "--window", help="Window size w."),
        theta: Optional[int] = typer.Option(None, "--theta", help="Lossy labels tolerated per window."),
        n_patches: Optional[int] = typer.Option(None, "--n-patches", help="Patches per image."),
        patch_size: Optional[int] = typer.Option(None, "--patch-size", help="Patch side in pixels."),
        seed: Optional[int] = typer.Option(None, "--seed", help="Patch placement seed."),
        out_dir: Optional[Path] = typer.Option(
            None, "--out-dir", "-o", help="Write one <image_id>.json per ladder here.", file_okay=False
        ),
        dump_patches: Optional[Path] = typer.Option(
            None, "--dump-patches", help="Write patch rectangles per ladder into this directory.",
            file_okay=False,
        ),
    ) -> None:
        """Predict JND levels and emit JNDResult JSON."""
        if ckpt is None and not oracle and oracle_db is None:
            raise typer.BadParameter("give --ckpt, --oracle or --oracle-db", param_hint="--ckpt")
        if ladders and index is not None:
            raise typer.BadParameter("use either --ladder or --index", param_hint="--ladder")
        if subset is not None and subset not in SUBSETS:
            raise typer.BadParameter(f"must be one of {', '.join(SUBSETS)}", param_hint="--subset")
        if strategy is not None and strategy.upper() not in ("NAIVE", "WINDOW"):
            raise typer.BadParameter("must be NAIVE or WINDOW", param_hint="--strategy")

        cfg = resolve_config(config)
        run = run_directory(cfg)
        checkpoint: Optional[Checkpoint] = load_checkpoint(ckpt) if ckpt else None
        train_cfg = checkpoint.config if checkpoint else cfg.train
        spec = SearchSpec(
            (strategy or train_cfg.search.strategy).upper(),
            train_cfg.search.window if window is None else window,
            train_cfg.search.threshold if theta is None else theta,
        )
        n = train_cfg.n_patches if n_patches is None else n_patches
        s = train_cfg.patch_size if patch_size is None else patch_size
        placement_seed = train_cfg.seed if seed is None else seed

        targets = _targets(ladders, index, run, checkpoint, subset)
        network = as_classifier(checkpoint) if checkpoint else None
        if out_dir is None and not ladders:
            tag = f"fold{checkpoint.fold}" if checkpoint else "oracle"
            out_dir = run / PREDICTIONS_DIR / tag

        results = []
        with step_progress("Predicting ladders", len(targets)) as progress:
            for image_id, ladder, threshold_db in targets:
                classifier: Classifier
                if network is not None:
                    classifier = network
                else:
                    threshold = oracle_db if oracle_db is not None else threshold_db
                    if threshold is None:
                        raise typer.BadParameter(
                            f"{image_id} stores no oracle threshold; pass --oracle-db",
                            param_hint="--oracle",
                        )
                    classifier = PsnrThresholdClassifier(threshold, luma_only=cfg.eval.luma_only)
                origins = None
                if classifier.uses_patches:
                    origins = sample_origins(
                        ladder.source.width, ladder.source.height, n, s, placement_seed
                    )
                    if dump_patches is not None:
                        dump_rectangles(
                            origins, s, dump_patches / f"{image_id}.json", image_id=image_id
                        )
                result = predict_image(
                    classifier, ladder, spec, n, s, placement_seed,
                    image_id=image_id, origins=origins,
                )
                results.append(result)
                if out_dir is not None:
                    out_dir.mkdir(parents=True, exist_ok=True)
                    (out_dir / f"{image_id}.json").write_text(result.to_json(), encoding="utf-8")
                progress.advance(image_id)

        if out_dir is None:
            payload = [result.to_dict() for result in results]
            typer.echo(json.dumps(payload[0] if len(payload) == 1 else payload, indent=2, sort_keys=True))
            return
        write_manifest(
            run,
            f"predict.{out_dir.name}",
            config=cfg.to_dict(),
            seeds={"patches": placement_seed},
            inputs=[out_dir] + ([ckpt] if ckpt else []),
        )
        none_count = sum(result.is_none for result in results)
        ui.success(f"Wrote {len(results)} predictions to {out_dir} ({none_count} without a JND)")

    return {"predict": predict}


Target = Tuple[str, CompressionLadder, Optional[float]]


def _targets(
    ladders: Optional[List[Path]],
    index_path: Optional[Path],
    run: Path,
    checkpoint: Optional[Checkpoint],
    subset: Optional[str],
) -> List[Target]:
    if ladders:
        targets: List[Target] = []
        for directory in ladders:
            manifest = read_ladder_manifest(directory)
            targets.append(
                (
                    manifest.get("image_id", directory.name),
                    load_ladder(directory),
                    manifest.get("oracle_threshold_db"),
                )
            )
        return targets
    index = DatasetIndex.load(index_path or run / DATA_DIR)
    ids = index.ids
    choice = subset or ("test" if checkpoint else "all")
    if choice != "all":
        if checkpoint is None or checkpoint.split is None:
            raise typer.BadParameter("subsets other than 'all' need --ckpt", param_hint="--subset")
        ids = list(getattr(checkpoint.split, choice))
    return [
        (record.image_id, materialize_ladder(index, record), record.oracle_threshold_db)
        for record in index.subset(ids).records
    ]
