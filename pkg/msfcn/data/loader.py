# msfcn/data/loader.py
"""Sample loading and batching for training and evaluation."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from msfcn.core.tensor import FLOAT, pad_label, pad_spatial_zero, round_up
from msfcn.data.augment import AugmentSpec, augment, draw_rng
from msfcn.data.manifest import ManifestEntry, load_image, load_label
from msfcn.errors import DataError


@dataclass(frozen=True)
class Batch:
    images: np.ndarray  # (b, c, t, h, w)
    labels: np.ndarray  # (b, h, w)
    indices: tuple[int, ...]


class PatchDataset:
    """Manifest entries as (image, label) pairs padded up to a spatial multiple.

    Rasters are read once and kept in memory; augmentation, when enabled, is
    drawn fresh per (epoch, index).
    """

    def __init__(self, entries: Sequence[ManifestEntry], multiple: int = 1, aug: AugmentSpec | None = None):
        if not entries:
            raise DataError("dataset has no entries")
        self.entries = list(entries)
        self.multiple = multiple
        self.aug = aug
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def raw(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        if index not in self._cache:
            e = self.entries[index]
            image, label = load_image(e.image), load_label(e.label)
            if image.shape[-2:] != label.shape:
                raise DataError(f"{e.image}: image extents {image.shape[-2:]} != label extents {label.shape}")
            self._cache[index] = (image, label)
        return self._cache[index]

    def __getitem__(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        return self.get(index, epoch=None)

    def get(self, index: int, epoch: int | None) -> tuple[np.ndarray, np.ndarray]:
        image, label = self.raw(index)
        if self.aug is not None and self.aug.enabled and epoch is not None:
            image, label = augment(image, label, self.aug, draw_rng(self.aug, epoch, index))
        h, w = label.shape
        th, tw = round_up(h, self.multiple), round_up(w, self.multiple)
        if (th, tw) != (h, w):
            image, label = pad_spatial_zero(image, th, tw), pad_label(label, th, tw)
        return image.astype(FLOAT, copy=False), label


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffled sample order, fixed by (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def iter_batches(
    dataset: PatchDataset,
    order: Sequence[int],
    batch_size: int,
    *,
    epoch: int | None = None,
    workers: int = 1,
) -> Iterator[Batch]:
    """Batches in `order`; the last partial batch is kept.

    Samples within a batch load in parallel, but pool.map keeps them in
    order, so the result does not depend on thread timing.
    """
    order = [int(i) for i in order]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            samples = list(pool.map(lambda i: dataset.get(i, epoch), idx))
            shapes = {s[0].shape for s in samples}
            if len(shapes) != 1:
                raise DataError(f"batch mixes sample shapes {sorted(shapes)}; tile to a common patch size first")
            yield Batch(
                images=np.stack([s[0] for s in samples]),
                labels=np.stack([s[1] for s in samples]),
                indices=tuple(idx),
            )
