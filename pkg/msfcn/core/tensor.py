# msfcn/core/tensor.py
"""Dense tensors are plain numpy arrays in canonical (c, t, h, w) order.

A leading batch axis makes the 5-D (b, c, t, h, w) layout the network runs
on. Label maps are uint16 (h, w) arrays with IGNORE_INDEX marking pixels
that carry no supervision.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from msfcn.errors import DataError, ShapeError

FLOAT = np.float32
LABEL = np.uint16
IGNORE_INDEX = 65535
MAX_RANK = 5


def check_extents(shape: Sequence[int]) -> tuple[int, ...]:
    extents = tuple(int(s) for s in shape)
    if not 1 <= len(extents) <= MAX_RANK:
        raise ShapeError(f"rank must be 1..{MAX_RANK}, got {len(extents)} for shape {extents}")
    if any(e < 1 for e in extents):
        raise ShapeError(f"every extent must be >= 1, got {extents}")
    return extents


def tensor_fill(shape: Sequence[int], value: float) -> np.ndarray:
    return np.full(check_extents(shape), value, dtype=FLOAT)


def concat_channels(a: np.ndarray, b: np.ndarray, axis: int = 0) -> np.ndarray:
    """Stack b's channels after a's. Use axis=1 for batched arrays."""
    if a.ndim != b.ndim:
        raise ShapeError(f"concat_channels rank mismatch: {a.shape} vs {b.shape}")
    rest_a = a.shape[:axis] + a.shape[axis + 1 :]
    rest_b = b.shape[:axis] + b.shape[axis + 1 :]
    if rest_a != rest_b:
        raise ShapeError(f"concat_channels non-channel extents differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=axis)


def pad_spatial_zero(x: np.ndarray, target_h: int, target_w: int, fill: float = 0) -> np.ndarray:
    """Grow the last two axes to (target_h, target_w), content top-left."""
    h, w = x.shape[-2:]
    if target_h < h or target_w < w:
        raise ShapeError(f"pad target {target_h}x{target_w} is smaller than source {h}x{w}")
    if (target_h, target_w) == (h, w):
        return x.copy()
    out = np.full(x.shape[:-2] + (target_h, target_w), fill, dtype=x.dtype)
    out[..., :h, :w] = x
    return out


def pad_label(label: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    return pad_spatial_zero(label, target_h, target_w, fill=IGNORE_INDEX)


def round_up(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple


def check_labels(label: np.ndarray, num_classes: int) -> None:
    bad = (label >= num_classes) & (label != IGNORE_INDEX)
    if bad.any():
        v = int(label[bad].flat[0])
        raise DataError(f"label value {v} is outside 0..{num_classes - 1} and is not ignore_index")
