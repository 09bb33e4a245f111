# msfcn/data/tiling.py
"""Non-overlapping patch grids over zero-padded rasters, and their inverse."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from msfcn.core.tensor import IGNORE_INDEX, pad_label, pad_spatial_zero, round_up
from msfcn.errors import DataError


@dataclass(frozen=True)
class TileGrid:
    rows: int
    cols: int
    patch: int
    height: int
    width: int

    @property
    def padded(self) -> tuple[int, int]:
        return self.rows * self.patch, self.cols * self.patch

    def __len__(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class Patch:
    image: np.ndarray
    label: np.ndarray
    row: int
    col: int


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle: columns x0..x1, rows y0..y1."""

    x0: int
    y0: int
    x1: int
    y1: int


def grid_for(height: int, width: int, patch: int) -> TileGrid:
    if patch < 1:
        raise DataError(f"patch size must be >= 1, got {patch}")
    return TileGrid(round_up(height, patch) // patch, round_up(width, patch) // patch, patch, height, width)


def tile_patches(image: np.ndarray, label: np.ndarray, patch: int) -> tuple[TileGrid, list[Patch]]:
    """Row-major patches of the padded raster; label padding is ignore_index."""
    h, w = image.shape[-2:]
    if label.shape != (h, w):
        raise DataError(f"label extents {label.shape} != image extents {(h, w)}")
    grid = grid_for(h, w, patch)
    ph, pw = grid.padded
    img = pad_spatial_zero(image, ph, pw)
    lbl = pad_label(label, ph, pw)
    out = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            ys = slice(r * patch, (r + 1) * patch)
            xs = slice(c * patch, (c + 1) * patch)
            out.append(Patch(img[..., ys, xs].copy(), lbl[ys, xs].copy(), r, c))
    return grid, out


def untile(pieces: Iterable[tuple[np.ndarray, tuple[int, int]]], grid: TileGrid) -> np.ndarray:
    """Reassemble (array, (row, col)) pieces and crop to the pre-padding extents."""
    seen: set[tuple[int, int]] = set()
    canvas = None
    p = grid.patch
    for arr, (r, c) in pieces:
        if not (0 <= r < grid.rows and 0 <= c < grid.cols):
            raise DataError(f"grid cell (row={r}, col={c}) is outside a {grid.rows}x{grid.cols} grid")
        if (r, c) in seen:
            raise DataError(f"duplicate grid cell (row={r}, col={c})")
        if arr.shape[-2:] != (p, p):
            raise DataError(f"cell (row={r}, col={c}) is {arr.shape[-2:]}, expected {(p, p)}")
        if canvas is None:
            canvas = np.zeros(arr.shape[:-2] + grid.padded, dtype=arr.dtype)
        canvas[..., r * p : (r + 1) * p, c * p : (c + 1) * p] = arr
        seen.add((r, c))
    for r in range(grid.rows):
        for c in range(grid.cols):
            if (r, c) not in seen:
                raise DataError(f"missing grid cell (row={r}, col={c})")
    return canvas[..., : grid.height, : grid.width]


def read_mask(path: str | Path) -> list[Rect]:
    """Rectangles from an `x0,y0,x1,y1` CSV (header optional)."""
    path = Path(path)
    try:
        rows = list(csv.reader(path.read_text(encoding="utf-8").splitlines()))
    except OSError as e:
        raise DataError(f"cannot read mask {path}: {e}") from e
    rects = []
    for n, row in enumerate(rows, start=1):
        if not row or not "".join(row).strip():
            continue
        if n == 1 and row[0].strip() == "x0":
            continue
        try:
            x0, y0, x1, y1 = (int(v) for v in row)
        except ValueError as e:
            raise DataError(f"{path}:{n}: expected four integers x0,y0,x1,y1") from e
        if x1 <= x0 or y1 <= y0 or min(x0, y0) < 0:
            raise DataError(f"{path}:{n}: empty or negative rectangle {row}")
        rects.append(Rect(x0, y0, x1, y1))
    return rects


def apply_region_mask(label: np.ndarray, rects: Sequence[Rect]) -> np.ndarray:
    """Copy of label with every pixel outside all rectangles set to ignore_index."""
    inside = np.zeros(label.shape, dtype=bool)
    for r in rects:
        inside[r.y0 : r.y1, r.x0 : r.x1] = True
    out = label.copy()
    out[~inside] = IGNORE_INDEX
    return out


def supervised(patches: Iterable[Patch]) -> list[Patch]:
    """Patches with at least one labelled pixel."""
    return [p for p in patches if (p.label != IGNORE_INDEX).any()]
