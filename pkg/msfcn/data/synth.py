# msfcn/data/synth.py
"""Synthetic datasets small enough to train on a laptop CPU.

synth_shapes paints rectangles and discs in per-class colours on a dark
background, so every class is separable from a single pixel. synth_temporal
builds single-channel series where both classes share the same per-pixel
value multiset over time and differ only in frame order: averaging over t
erases the class.
"""
from __future__ import annotations

import colorsys
import logging
from pathlib import Path

import numpy as np

from msfcn.core.tensor import FLOAT, LABEL
from msfcn.core.tns import save_tensor
from msfcn.data.manifest import DatasetManifest, ManifestEntry, write_manifest
from msfcn.errors import DataError

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
BACKGROUND = (0.1, 0.1, 0.1)
SHAPE_NOISE = 0.02
SERIES_NOISE = 0.05
BLOCK = 8


def palette(num_classes: int) -> np.ndarray:
    """(K, 3) colours: class 0 is the background, the rest spread over the hue wheel."""
    colours = [BACKGROUND]
    for k in range(1, num_classes):
        colours.append(colorsys.hsv_to_rgb((k - 1) / max(1, num_classes - 1), 0.8, 0.9))
    return np.asarray(colours, dtype=FLOAT)


def _write_pair(out_dir: Path, i: int, image: np.ndarray, label: np.ndarray) -> ManifestEntry:
    img = save_tensor(image.astype(FLOAT), out_dir / f"img_{i:03d}.tns")
    lbl = save_tensor(label.astype(LABEL), out_dir / f"lbl_{i:03d}.tns")
    return ManifestEntry(img, lbl, "train")


def shapes_label(rng: np.random.Generator, size: int, num_classes: int) -> np.ndarray:
    label = np.zeros((size, size), dtype=LABEL)
    yy, xx = np.mgrid[:size, :size]
    lo, hi = max(1, size // 8), max(2, size // 4)
    for _ in range(int(rng.integers(2, 5))):
        cls = int(rng.integers(1, num_classes))
        cy, cx = (int(v) for v in rng.integers(0, size, size=2))
        r = int(rng.integers(lo, hi + 1))
        if rng.random() < 0.5:
            mask = (abs(yy - cy) <= r) & (abs(xx - cx) <= r)
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        label[mask] = cls
    return label


def synth_shapes(num_images: int, size: int, num_classes: int, seed: int, out_dir: str | Path) -> DatasetManifest:
    if num_classes < 2:
        raise DataError(f"synth_shapes needs num_classes >= 2, got {num_classes}")
    if num_images < 1 or size < 4:
        raise DataError(f"synth_shapes needs num_images >= 1 and size >= 4, got {num_images}, {size}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    colours = palette(num_classes)
    entries = []
    for i in range(num_images):
        label = shapes_label(rng, size, num_classes)
        image = colours[label].transpose(2, 0, 1)[:, None]
        image = image + rng.normal(0.0, SHAPE_NOISE, size=image.shape)
        entries.append(_write_pair(out_dir, i, image, label))
    m = DatasetManifest(entries, num_classes=num_classes, channels=3, time_steps=1, patch=size)
    write_manifest(m, out_dir / MANIFEST_NAME)
    log.info("synth shapes n=%d size=%d classes=%d dir=%s", num_images, size, num_classes, out_dir)
    return m


def temporal_sequences(time_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Class 0: rising ramp. Class 1: the same ramp rotated by half its length."""
    ramp = np.linspace(0.0, 1.0, time_steps)
    return ramp, np.roll(ramp, -(time_steps // 2))


def synth_temporal(num_images: int, size: int, time_steps: int, seed: int, out_dir: str | Path) -> DatasetManifest:
    """Two classes laid out on a random grid of BLOCK x BLOCK cells.

    Each pixel gets its own offset and gain shared by all frames, so the
    time-averaged value has the same distribution for both classes.
    """
    if time_steps < 3:
        raise DataError(f"synth_temporal needs time_steps >= 3, got {time_steps}")
    if num_images < 1 or size < 1:
        raise DataError(f"synth_temporal needs num_images >= 1 and size >= 1, got {num_images}, {size}")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    seqs = np.stack(temporal_sequences(time_steps))  # (2, t)
    cells = -(-size // BLOCK)
    entries = []
    for i in range(num_images):
        grid = rng.integers(0, 2, size=(cells, cells))
        label = np.kron(grid, np.ones((BLOCK, BLOCK), dtype=np.int64))[:size, :size].astype(LABEL)
        offset = rng.uniform(-0.5, 0.5, size=(size, size))
        gain = rng.uniform(0.5, 1.5, size=(size, size))
        series = seqs[label.astype(np.int64)].transpose(2, 0, 1)  # (t, h, w)
        values = offset + gain * series + rng.normal(0.0, SERIES_NOISE, size=series.shape)
        entries.append(_write_pair(out_dir, i, values[None], label))
    m = DatasetManifest(entries, num_classes=2, channels=1, time_steps=time_steps, patch=size)
    write_manifest(m, out_dir / MANIFEST_NAME)
    log.info("synth temporal n=%d size=%d t=%d dir=%s", num_images, size, time_steps, out_dir)
    return m
