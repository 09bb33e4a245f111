# msfcn/data/augment.py
"""Random flips, per-channel gain, Gaussian blur and additive noise.

Geometric transforms touch image and label alike; photometric ones touch
the image only. Each enabled transform fires with probability 1/2 per draw.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from msfcn.core.tensor import FLOAT
from msfcn.errors import ConfigError

TRANSFORMS = ("hflip", "vflip", "color_enhance", "gaussian_blur", "random_noise")

Range = tuple[float, float]


@dataclass(frozen=True)
class AugmentSpec:
    enabled: tuple[str, ...] = ()
    gain: Range = (0.9, 1.1)
    blur_sigma: Range = (0.5, 1.5)
    noise_std: Range = (0.0, 0.05)
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "enabled", tuple(self.enabled))
        unknown = [t for t in self.enabled if t not in TRANSFORMS]
        if unknown:
            raise ConfigError(f"unknown augmentation {unknown[0]!r}, expected one of {TRANSFORMS}")
        for name in ("gain", "blur_sigma", "noise_std"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"aug range {name}={lo},{hi} must satisfy 0 <= lo <= hi")


def draw_rng(spec: AugmentSpec, epoch: int, index: int) -> np.random.Generator:
    """A generator fixed by (seed, epoch, sample index), independent of loader timing."""
    return np.random.default_rng([spec.seed, epoch, index])


def blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian over (h, w) for every channel and frame."""
    if sigma <= 0:
        return image
    out = gaussian_filter1d(image, sigma, axis=-2, mode="nearest")
    return gaussian_filter1d(out, sigma, axis=-1, mode="nearest")


def augment(
    image: np.ndarray, label: np.ndarray, spec: AugmentSpec, draw: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """image is (c, t, h, w), label (h, w)."""
    for name in spec.enabled:
        if draw.random() >= 0.5:
            continue
        if name == "hflip":
            image, label = image[..., ::-1], label[..., ::-1]
        elif name == "vflip":
            image, label = image[..., ::-1, :], label[..., ::-1, :]
        elif name == "color_enhance":
            gain = draw.uniform(*spec.gain, size=image.shape[0]).astype(FLOAT)
            image = image * gain.reshape(-1, *([1] * (image.ndim - 1)))
        elif name == "gaussian_blur":
            image = blur(image, float(draw.uniform(*spec.blur_sigma)))
        elif name == "random_noise":
            span = float(image.max() - image.min()) or 1.0
            std = float(draw.uniform(*spec.noise_std)) * span
            if std > 0:
                image = image + draw.normal(0.0, std, size=image.shape).astype(FLOAT)
    return np.ascontiguousarray(image, dtype=FLOAT), np.ascontiguousarray(label)
