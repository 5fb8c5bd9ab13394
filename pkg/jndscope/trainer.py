"""Cross-validated training, checkpoints and per-ladder JND prediction."""

from __future__ import annotations

import base64
import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from jndscope.configuration.schema import TrainConfig
from jndscope.core import (
    CompressionLadder,
    JNDResult,
    LabelOrigin,
    LabelSequence,
    ProgressCallback,
    labels_from_jnd,
)
from jndscope.errors import JndscopeError
from jndscope.head import bce_torch
from jndscope.ingest import DatasetIndex, materialize_ladder
from jndscope.model import Classifier, JNDNet, NetworkClassifier, pairs_to_tensors
from jndscope.patcher import Origin, crop_pairs, sample_origins
from jndscope.search import SearchSpec, run_search

MODEL_FILE = "model.safetensors"
SIDECAR_FILE = "checkpoint.json"
TRAIN_LOG = "train_log.csv"
CHECKPOINT_SCHEMA = 1

PathLike = Union[str, Path]


class TooFewRecords(JndscopeError, ValueError):
    """The dataset has fewer records than cross-validation folds."""


class NonFiniteLoss(JndscopeError):
    def __init__(self, epoch: int, batch_id: int, value: float):
        self.epoch = epoch
        self.batch_id = batch_id
        super().__init__(f"loss became {value} in epoch {epoch}, batch {batch_id}")


class CheckpointError(JndscopeError):
    """A checkpoint directory is missing files or does not match its sidecar."""


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fold": self.fold,
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FoldSplit":
        return cls(
            fold=int(data["fold"]),
            train=tuple(data["train"]),
            val=tuple(data["val"]),
            test=tuple(data["test"]),
        )


def split_folds(index: DatasetIndex, k: int, seed: int) -> List[FoldSplit]:
    """Rotate k shuffled chunks: fold i tests chunk i, validates on chunk i+1, trains on the rest."""
    ids = sorted(index.ids)
    if k < 3:
        raise ValueError("cross-validation needs at least 3 folds")
    if len(ids) < k:
        raise TooFewRecords(f"{len(ids)} records cannot be split into {k} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    chunks = [sorted(ids[i] for i in chunk) for chunk in np.array_split(order, k)]
    splits = []
    for fold in range(k):
        val_chunk = (fold + 1) % k
        train = sorted(
            image_id
            for j, chunk in enumerate(chunks)
            if j not in (fold, val_chunk)
            for image_id in chunk
        )
        splits.append(
            FoldSplit(
                fold=fold,
                train=tuple(train),
                val=tuple(chunks[val_chunk]),
                test=tuple(chunks[fold]),
            )
        )
    return splits


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Learning rate in effect during 1-based ``epoch``."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return config.lr * config.lr_decay ** ((epoch - 1) // config.lr_step)


def sample_levels(
    target: int,
    level_range: Tuple[int, int],
    count: int,
    rng: np.random.Generator,
    *,
    band: int = 10,
    boundary_fraction: float = 0.5,
) -> List[int]:
    """Levels for one image: a share near ``target`` (within ``band``), the rest uniform."""
    lo, hi = level_range
    near = int(round(count * boundary_fraction))
    band_lo, band_hi = max(lo, target - band), min(hi, target + band)
    levels = [int(v) for v in rng.integers(band_lo, band_hi + 1, size=near)]
    levels += [int(v) for v in rng.integers(lo, hi + 1, size=count - near)]
    return levels


def _origins_seed(seed: int, epoch: int, position: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, position]).generate_state(1)[0])


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_bce: float
    val_bce: float
    lr: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "train_bce": self.train_bce,
            "val_bce": self.val_bce,
            "lr": self.lr,
        }


@dataclass
class Checkpoint:
    state: Dict[str, torch.Tensor]
    config: TrainConfig
    epoch: int
    val_bce: float
    train_bce: float
    fold: int
    split: Optional[FoldSplit] = None
    history: List[EpochLog] = field(default_factory=list)
    rng: Dict[str, Any] = field(default_factory=dict)
    backbone_sha256: Optional[str] = None

    def model(self) -> JNDNet:
        net = JNDNet(self.config)
        net.load_trainable_state(self.state)
        return net.eval()


# (image_id, level, label, origins seed)
Sample = Tuple[str, int, int, int]


class _LadderCache:
    def __init__(self, index: DatasetIndex):
        self.index = index
        self._ladders: Dict[str, CompressionLadder] = {}

    def get(self, image_id: str) -> CompressionLadder:
        if image_id not in self._ladders:
            self._ladders[image_id] = materialize_ladder(self.index, self.index.get(image_id))
        return self._ladders[image_id]


def _samples_for(
    ids: Sequence[str],
    index: DatasetIndex,
    config: TrainConfig,
    rng: np.random.Generator,
    count: int,
    epoch: int,
) -> List[Sample]:
    samples: List[Sample] = []
    for position, image_id in enumerate(ids):
        record = index.get(image_id)
        if record.jnd_target is None:
            raise JndscopeError(f"{image_id} has no JND target; run prepare first")
        codec = record.codec.to_spec()
        truth = labels_from_jnd(record.jnd_target, codec).labels
        levels = sample_levels(
            record.jnd_target,
            codec.level_range,
            count,
            rng,
            band=config.boundary_band,
            boundary_fraction=config.boundary_fraction,
        )
        seed = _origins_seed(config.seed, epoch, position)
        samples.extend((image_id, level, truth[level], seed) for level in levels)
    return samples


def _batch(
    samples: Sequence[Sample], ladders: _LadderCache, config: TrainConfig
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    refs, dists = [], []
    origins: Dict[Tuple[str, int], List[Origin]] = {}
    for image_id, level, _, seed in samples:
        ladder = ladders.get(image_id)
        key = (image_id, seed)
        if key not in origins:
            origins[key] = sample_origins(
                ladder.source.width,
                ladder.source.height,
                config.n_patches,
                config.patch_size,
                seed,
            )
        pairs = crop_pairs(ladder.source, ladder.rung(level), origins[key], config.patch_size)
        ref, dist = pairs_to_tensors(pairs)
        refs.append(ref)
        dists.append(dist)
    labels = torch.tensor([label for _, _, label, _ in samples], dtype=torch.float32)
    return torch.cat(refs), torch.cat(dists), labels


def _mean_bce(
    net: JNDNet, samples: Sequence[Sample], ladders: _LadderCache, config: TrainConfig
) -> float:
    if not samples:
        return float("nan")
    total = 0.0
    net.eval()
    with torch.no_grad():
        for start in range(0, len(samples), config.batch_size):
            chunk = samples[start : start + config.batch_size]
            ref, dist, labels = _batch(chunk, ladders, config)
            q, _, _ = net(ref, dist)
            total += float(bce_torch(q, labels)) * len(chunk)
    return total / len(samples)


def _rng_snapshot(rng: np.random.Generator) -> Dict[str, Any]:
    return {
        "numpy": rng.bit_generator.state,
        "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode("ascii"),
    }


def train(
    config: TrainConfig,
    fold: int,
    index: DatasetIndex,
    *,
    out_dir: Optional[PathLike] = None,
    progress_callback: Optional[ProgressCallback] = None,
) -> Checkpoint:
    """Train one fold with Adam and a step-decayed rate; keep the epoch with the lowest val BCE."""
    split = split_folds(index, config.folds, config.seed)[fold]
    if not split.train:
        raise TooFewRecords(f"fold {fold} has no training records")
    ladders = _LadderCache(index)
    history: List[EpochLog] = []
    best: Optional[Checkpoint] = None
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        net = JNDNet(config)
        parameters = [p for p in net.parameters() if p.requires_grad]
        optimizer = torch.optim.Adam(parameters, lr=config.lr)
        scheduler = torch.optim.lr_scheduler.StepLR(
            optimizer, step_size=config.lr_step, gamma=config.lr_decay
        )
        rng = np.random.default_rng([config.seed, fold])
        val_samples = _samples_for(
            split.val, index, config, np.random.default_rng([config.seed, fold, 0]),
            config.val_levels, 0,
        )
        for epoch in range(1, config.epochs + 1):
            if progress_callback:
                progress_callback("start", epoch, config.epochs, None)
            lr = optimizer.param_groups[0]["lr"]
            samples = _samples_for(split.train, index, config, rng, config.levels_per_image, epoch)
            samples = [samples[i] for i in rng.permutation(len(samples))]
            net.train()
            total = 0.0
            for batch_id, start in enumerate(range(0, len(samples), config.batch_size)):
                chunk = samples[start : start + config.batch_size]
                ref, dist, labels = _batch(chunk, ladders, config)
                q, _, _ = net(ref, dist)
                loss = bce_torch(q, labels)
                if not torch.isfinite(loss):
                    raise NonFiniteLoss(epoch, batch_id, float(loss))
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += float(loss) * len(chunk)
            scheduler.step()
            log = EpochLog(
                epoch=epoch,
                train_bce=total / len(samples),
                val_bce=_mean_bce(net, val_samples, ladders, config),
                lr=lr,
            )
            history.append(log)
            if best is None or log.val_bce < best.val_bce:
                best = Checkpoint(
                    state={k: v.detach().clone() for k, v in net.trainable_state().items()},
                    config=config,
                    epoch=epoch,
                    val_bce=log.val_bce,
                    train_bce=log.train_bce,
                    fold=fold,
                    split=split,
                    rng=_rng_snapshot(rng),
                    backbone_sha256=net.backbone.weights_sha256,
                )
            if progress_callback:
                progress_callback("end", epoch, config.epochs, log)
    assert best is not None
    best.history = history
    if out_dir is not None:
        save_checkpoint(best, out_dir)
        write_train_log(history, Path(out_dir) / TRAIN_LOG)
    return best


def write_train_log(history: Sequence[EpochLog], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["epoch", "train_bce", "val_bce", "lr"])
        for log in history:
            writer.writerow([log.epoch, f"{log.train_bce:.6f}", f"{log.val_bce:.6f}", f"{log.lr:.6g}"])
    return path


def save_checkpoint(checkpoint: Checkpoint, directory: PathLike) -> Path:
    """Write ``model.safetensors`` plus a ``checkpoint.json`` sidecar."""
    from safetensors.torch import save_file

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().contiguous().clone() for k, v in checkpoint.state.items()}
    save_file(tensors, str(directory / MODEL_FILE), metadata={"format": "pt"})
    sidecar = {
        "schema": CHECKPOINT_SCHEMA,
        "config": checkpoint.config.model_dump(mode="json"),
        "epoch": checkpoint.epoch,
        "val_bce": checkpoint.val_bce,
        "train_bce": checkpoint.train_bce,
        "fold": checkpoint.fold,
        "split": checkpoint.split.to_dict() if checkpoint.split else None,
        "history": [log.to_dict() for log in checkpoint.history],
        "rng": checkpoint.rng,
        "backbone_sha256": checkpoint.backbone_sha256,
    }
    (directory / SIDECAR_FILE).write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return directory


def load_checkpoint(directory: PathLike) -> Checkpoint:
    from safetensors.torch import load_file

    directory = Path(directory)
    model_path, sidecar_path = directory / MODEL_FILE, directory / SIDECAR_FILE
    missing = [str(p) for p in (model_path, sidecar_path) if not p.is_file()]
    if missing:
        raise CheckpointError(f"checkpoint files missing: {', '.join(missing)}")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        config = TrainConfig.model_validate(sidecar["config"])
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint sidecar {sidecar_path}: {exc}") from exc
    if sidecar.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"unsupported checkpoint schema {sidecar.get('schema')}")
    return Checkpoint(
        state=load_file(str(model_path)),
        config=config,
        epoch=int(sidecar["epoch"]),
        val_bce=float(sidecar["val_bce"]),
        train_bce=float(sidecar["train_bce"]),
        fold=int(sidecar["fold"]),
        split=FoldSplit.from_dict(sidecar["split"]) if sidecar.get("split") else None,
        history=[EpochLog(**log) for log in sidecar.get("history", [])],
        rng=sidecar.get("rng", {}),
        backbone_sha256=sidecar.get("backbone_sha256"),
    )


def as_classifier(source: Union[Classifier, Checkpoint, JNDNet]) -> Classifier:
    if isinstance(source, Checkpoint):
        return NetworkClassifier(source.model())
    if isinstance(source, JNDNet):
        return NetworkClassifier(source)
    return source


def predict_image(
    classifier: Union[Classifier, Checkpoint, JNDNet],
    ladder: CompressionLadder,
    spec: SearchSpec,
    n_patches: int,
    patch_size: int,
    seed: int,
    *,
    image_id: Optional[str] = None,
    origins: Optional[List[Origin]] = None,
) -> JNDResult:
    """Label every rung with one shared patch placement, then run the search."""
    classifier = as_classifier(classifier)
    source = ladder.source
    if classifier.uses_patches and origins is None:
        origins = sample_origins(source.width, source.height, n_patches, patch_size, seed)
    labels: Dict[int, int] = {}
    for level, rung in ladder:
        pairs = crop_pairs(source, rung, origins, patch_size) if classifier.uses_patches else []
        labels[level] = classifier.decide(source, rung, pairs).label
    sequence = LabelSequence(codec=ladder.codec, labels=labels, origin=LabelOrigin.PREDICTED)
    return replace(run_search(sequence, spec), image_id=image_id)
