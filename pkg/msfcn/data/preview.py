# msfcn/data/preview.py
"""Colour PNG previews of label maps."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from msfcn.core.tensor import IGNORE_INDEX
from msfcn.errors import DataError

# Fixed palette, cycled for K > len(PALETTE). Ignore pixels are black.
PALETTE = np.array(
    [
        (255, 255, 255),
        (0, 0, 255),
        (0, 255, 255),
        (0, 255, 0),
        (255, 255, 0),
        (255, 0, 0),
        (255, 0, 255),
        (128, 64, 0),
        (0, 128, 128),
        (128, 128, 128),
    ],
    dtype=np.uint8,
)
IGNORE_RGB = (0, 0, 0)


def colourize(label: np.ndarray) -> np.ndarray:
    if label.ndim != 2:
        raise DataError(f"preview needs an (h, w) label map, got {label.shape}")
    idx = label.astype(np.int64)
    rgb = PALETTE[idx % len(PALETTE)]
    rgb[idx == IGNORE_INDEX] = IGNORE_RGB
    return rgb


def save_png(label: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(colourize(label)).save(path, format="PNG")
    return path
