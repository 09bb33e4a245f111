# msfcn/train/protocol.py
"""Training-run settings and validation-driven early stopping."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from msfcn.errors import ConfigError

MONITORS = ("val_oa",)


@dataclass(frozen=True)
class TrainRunConfig:
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    monitor: str = "val_oa"
    checkpoint_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.monitor not in MONITORS:
            raise ConfigError(f"monitor must be one of {MONITORS}, got {self.monitor!r}")


class EarlyStopping:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best: float = float("-inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record one epoch's score; True when it is a new best."""
        if score > self.best:
            self.best = score
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def patience_left(self) -> int:
        return self.patience - self.bad_epochs

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience
