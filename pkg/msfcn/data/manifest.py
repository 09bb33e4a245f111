# msfcn/data/manifest.py
"""Dataset manifests: `image,label,split` CSV rows plus `# key=value` metadata.

    # num_classes=4
    # channels=3
    # time_steps=1
    # patch=64
    # granularity=image
    # fractions=0.6,0.2,0.2
    image,label,split
    img_000.tns,lbl_000.tns,train

Relative paths resolve against the manifest's own directory.
"""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from msfcn.core.tensor import FLOAT, IGNORE_INDEX, LABEL
from msfcn.core.tns import load_tensor
from msfcn.errors import DataError

SPLITS = ("train", "val", "test")
GRANULARITIES = ("image", "patch")
HEADER = ["image", "label", "split"]
DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    label: Path
    split: str = "train"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    num_classes: int = 2
    channels: int = 1
    time_steps: int = 1
    patch: int = 256
    granularity: str = "image"
    fractions: tuple[float, ...] = ()

    def split(self, name: str) -> list[ManifestEntry]:
        """Entries of one split; an empty split is a data error."""
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}, expected one of {SPLITS}")
        out = [e for e in self.entries if e.split == name]
        if not out:
            raise DataError(f"split {name!r} is empty ({len(self.entries)} entries in manifest)")
        return out

    def counts(self) -> dict[str, int]:
        return {s: sum(1 for e in self.entries if e.split == s) for s in SPLITS}

    def validate(self) -> None:
        """Every file parses and every image/label pair agrees on (h, w)."""
        for e in self.entries:
            image = load_image(e.image)
            label = load_label(e.label)
            if image.shape[0] != self.channels or image.shape[1] != self.time_steps:
                raise DataError(
                    f"{e.image}: (c={image.shape[0]}, t={image.shape[1]}) does not match "
                    f"manifest (c={self.channels}, t={self.time_steps})"
                )
            if image.shape[-2:] != label.shape:
                raise DataError(f"{e.image}: image extents {image.shape[-2:]} != label extents {label.shape}")
            valid = label[label != IGNORE_INDEX]
            if valid.size and int(valid.max()) >= self.num_classes:
                raise DataError(f"{e.label}: label {int(valid.max())} >= num_classes {self.num_classes}")


def load_image(path: str | Path) -> np.ndarray:
    """Read an image raster as (c, t, h, w); (h, w) and (c, h, w) are promoted."""
    x = load_tensor(path)
    if x.dtype != FLOAT:
        raise DataError(f"{path}: image must be f32, got {x.dtype}")
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[:, None]
    elif x.ndim != 4:
        raise DataError(f"{path}: image rank must be 2..4, got shape {x.shape}")
    return x


def load_label(path: str | Path) -> np.ndarray:
    y = load_tensor(path)
    if y.dtype != LABEL or y.ndim != 2:
        raise DataError(f"{path}: label must be a u16 (h, w) map, got {y.dtype} {y.shape}")
    return y


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    meta: dict[str, str] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            k, sep, v = line[1:].partition("=")
            if sep:
                meta[k.strip()] = v.strip()
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or [c.strip() for c in rows[0]] != HEADER:
        raise DataError(f"{path}: expected header {','.join(HEADER)}")
    base = path.parent
    entries = []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise DataError(f"{path}: row {n} has {len(row)} fields, expected 3")
        image, label, split = (c.strip() for c in row)
        if split not in SPLITS:
            raise DataError(f"{path}: row {n} has split {split!r}, expected one of {SPLITS}")
        entries.append(ManifestEntry(base / image, base / label, split))
    try:
        m = DatasetManifest(
            entries=entries,
            num_classes=int(meta.get("num_classes", 2)),
            channels=int(meta.get("channels", 1)),
            time_steps=int(meta.get("time_steps", 1)),
            patch=int(meta.get("patch", 256)),
            granularity=meta.get("granularity", "image"),
            fractions=tuple(float(f) for f in meta.get("fractions", "").split(",") if f.strip()),
        )
    except ValueError as e:
        raise DataError(f"{path}: bad metadata ({e})") from e
    if m.granularity not in GRANULARITIES:
        raise DataError(f"{path}: granularity {m.granularity!r}, expected one of {GRANULARITIES}")
    return m


def _rel(p: Path, base: Path) -> str:
    try:
        return Path(os.path.relpath(p, base)).as_posix()
    except ValueError:
        return str(p)


def write_manifest(m: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for k in ("num_classes", "channels", "time_steps", "patch", "granularity"):
        buf.write(f"# {k}={getattr(m, k)}\n")
    if m.fractions:
        buf.write(f"# fractions={','.join(repr(f) for f in m.fractions)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    base = path.parent.resolve()
    for e in m.entries:
        w.writerow([_rel(Path(e.image).resolve(), base), _rel(Path(e.label).resolve(), base), e.split])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def split_counts(n: int, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> tuple[int, int, int]:
    """floor(f_train n) / floor(f_val n) / remainder."""
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise DataError(f"fractions must be three non-negative numbers, got {tuple(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-6:
        raise DataError(f"fractions must sum to 1, got {sum(fractions)}")
    if n < 3:
        raise DataError(f"need at least 3 entries to split, got {n}")
    n_train = math.floor(fractions[0] * n + 1e-9)
    n_val = math.floor(fractions[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_dataset(
    manifest: DatasetManifest | Iterable[ManifestEntry],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> DatasetManifest:
    """Seeded shuffle, then contiguous train/val/test assignment."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest(entries=list(manifest))
    entries = manifest.entries
    n_train, n_val, _ = split_counts(len(entries), fractions)
    order = np.random.default_rng(seed).permutation(len(entries))
    out = []
    for rank, i in enumerate(order):
        split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        out.append(replace(entries[int(i)], split=split))
    return replace(manifest, entries=out, fractions=tuple(float(f) for f in fractions))

