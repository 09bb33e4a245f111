# msfcn/train/loop.py
"""Epoch loop: seeded shuffling, Adam updates, validation OA and early stopping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, TextIO

import numpy as np

from msfcn.core.tensor import IGNORE_INDEX
from msfcn.data.augment import AugmentSpec
from msfcn.data.loader import PatchDataset, epoch_order, iter_batches
from msfcn.data.manifest import DatasetManifest
from msfcn.errors import DataError, NumericError
from msfcn.model.checkpoint import save_checkpoint
from msfcn.model.network import Network, forward
from msfcn.nn.ops import cross_entropy
from msfcn.nn.tape import GradTape
from msfcn.train.adam import AdamState, adam_step
from msfcn.train.predict import evaluate_dataset, overall_accuracy
from msfcn.train.protocol import EarlyStopping, TrainRunConfig

log = logging.getLogger(__name__)

LOG_NAME = "train.log"

ScoreFn = Callable[[int, Network], float]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    val_oa: float
    best: float
    patience_left: int

    def line(self) -> str:
        return (
            f"epoch={self.epoch} loss={self.loss:.6f} val_oa={self.val_oa:.6f} "
            f"best={self.best:.6f} patience_left={self.patience_left}"
        )


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("-inf")

    @property
    def epochs(self) -> int:
        return len(self.history)

    @property
    def lines(self) -> list[str]:
        return [r.line() for r in self.history]


def train_step(net: Network, images: np.ndarray, labels: np.ndarray, state: AdamState) -> float:
    """One forward/backward/Adam update on a batch; returns the batch loss."""
    net.zero_grad()
    with GradTape() as tape:
        logits = forward(net, images, "train")
        loss = cross_entropy(logits, labels)
    value = float(loss.value)
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss {value} at optimizer step {state.step + 1}")
    tape.backward(loss)
    adam_step(net.parameters(), None, state)
    return value


def _check_manifest(net: Network, manifest: DatasetManifest) -> None:
    cfg = net.cfg
    if (manifest.channels, manifest.time_steps) != (cfg.in_channels, cfg.time_steps):
        raise DataError(
            f"manifest (c={manifest.channels}, t={manifest.time_steps}) does not match "
            f"network (c={cfg.in_channels}, t={cfg.time_steps})"
        )
    if manifest.num_classes != cfg.num_classes:
        raise DataError(f"manifest has {manifest.num_classes} classes, network predicts {cfg.num_classes}")


def train(
    net: Network,
    manifest: DatasetManifest,
    cfg: TrainRunConfig,
    *,
    aug: AugmentSpec | None = None,
    config_text: str | None = None,
    log_path: str | Path | None = None,
    score_fn: ScoreFn | None = None,
    workers: int = 1,
    out: TextIO | None = None,
) -> TrainResult:
    """Train until patience runs out or max_epochs is reached.

    The best-so-far checkpoint is written to cfg.checkpoint_dir whenever
    validation OA strictly improves. score_fn replaces validation OA (used to
    drive the stopping rule with scripted scores). Each epoch line goes to
    `out` (stdout when None) and to log_path.
    """
    _check_manifest(net, manifest)
    train_set = PatchDataset(manifest.split("train"), net.cfg.spatial_multiple, aug)
    val_set = PatchDataset(manifest.split("val"), net.cfg.spatial_multiple)
    state = AdamState.create(net.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    stopper = EarlyStopping(cfg.patience)
    result = TrainResult()
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = Path(log_path).open("w", encoding="utf-8")
    log.info("plan train=%d val=%d batch=%d max_epochs=%d", len(train_set), len(val_set), cfg.batch_size, cfg.max_epochs)
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            losses = []
            order = epoch_order(len(train_set), cfg.seed, epoch)
            for batch in iter_batches(train_set, order, cfg.batch_size, epoch=epoch, workers=workers):
                if not (batch.labels != IGNORE_INDEX).any():
                    log.debug("skip batch without labelled pixels epoch=%d indices=%s", epoch, batch.indices)
                    continue
                losses.append(train_step(net, batch.images, batch.labels, state))
            if not losses:
                raise DataError("train split has no labelled pixels")
            score = score_fn(epoch, net) if score_fn else overall_accuracy(evaluate_dataset(net, val_set))
            if stopper.update(epoch, score) and cfg.checkpoint_dir is not None:
                save_checkpoint(net, cfg.checkpoint_dir, config_text)
            record = EpochRecord(epoch, float(np.mean(losses)), score, stopper.best, stopper.patience_left)
            result.history.append(record)
            print(record.line(), file=out, flush=True)
            if log_file is not None:
                log_file.write(record.line() + "\n")
                log_file.flush()
            if stopper.should_stop:
                log.info("early stop epoch=%d best_epoch=%d", epoch, stopper.best_epoch)
                break
    finally:
        if log_file is not None:
            log_file.close()
    result.best_epoch = stopper.best_epoch
    result.best_score = stopper.best
    return result
