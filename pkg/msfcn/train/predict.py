# msfcn/train/predict.py
"""Per-pixel class prediction and split evaluation."""
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from msfcn.core.tensor import FLOAT, LABEL, pad_spatial_zero, round_up
from msfcn.data.loader import PatchDataset
from msfcn.data.manifest import ManifestEntry
from msfcn.errors import DataError, ShapeError
from msfcn.metrics.confusion import ConfusionMatrix, accumulate
from msfcn.model.network import Network, forward

log = logging.getLogger(__name__)


def labels_from_logits(logits: np.ndarray) -> np.ndarray:
    """Argmax over the class axis of (K, h, w) or (b, K, h, w); ties go to the lowest index."""
    return np.argmax(logits, axis=-3).astype(LABEL)


def predict(net: Network, image: np.ndarray) -> np.ndarray:
    """(c, t, h, w) with h, w divisible by 2^L -> (h, w) label map."""
    if image.ndim != 4:
        raise ShapeError(f"predict expects a (c, t, h, w) image, got {image.shape}")
    logits = forward(net, np.asarray(image, dtype=FLOAT)[None], "eval").value
    return labels_from_logits(logits[0])


def predict_padded(net: Network, image: np.ndarray) -> np.ndarray:
    """Zero-pad to the next 2^L multiple, predict, crop back to the input extents."""
    h, w = image.shape[-2:]
    m = net.cfg.spatial_multiple
    padded = pad_spatial_zero(image, round_up(h, m), round_up(w, m))
    return predict(net, padded)[:h, :w]


def evaluate_dataset(net: Network, dataset: PatchDataset) -> ConfusionMatrix:
    cm = ConfusionMatrix(net.cfg.num_classes)
    for i in range(len(dataset)):
        image, label = dataset.raw(i)
        accumulate(cm, predict_padded(net, image), label)
    log.debug("evaluated entries=%d pixels=%d", len(dataset), cm.total)
    return cm


def evaluate_entries(net: Network, entries: Sequence[ManifestEntry]) -> ConfusionMatrix:
    if not entries:
        raise DataError("nothing to evaluate: split is empty")
    return evaluate_dataset(net, PatchDataset(entries))


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("no labelled pixels to score")
    return int(np.trace(cm.counts)) / cm.total
