# msfcn/model/gradsuite.py
"""The finite-difference suite behind `msfcn gradcheck`.

Every check builds small random float64 inputs from its seed, so a failing
op can be reproduced from (name, seed) alone.
"""
from __future__ import annotations

import logging
from typing import Callable, Sequence

import numpy as np

from msfcn.core.tensor import IGNORE_INDEX
from msfcn.errors import ConfigError
from msfcn.model.network import NetworkConfig, build_msfcn, forward
from msfcn.nn.blocks import cab_forward, gpm_forward, init_cab, init_gpm, init_mscb, mscb_forward
from msfcn.nn.gradcheck import CheckResult, grad_check
from msfcn.nn.ops import (
    activation,
    batchnorm,
    conv3d,
    cross_entropy,
    global_avg_pool3d,
    maxpool3d,
    transposed_conv3d,
)
from msfcn.nn.params import init_bn, init_conv

log = logging.getLogger(__name__)

SEEDS = (0, 1, 2)
SAMPLE = 24

TINY_NET = NetworkConfig(
    in_channels=2,
    time_steps=2,
    num_classes=3,
    encoder_channels=(4, 8),
    num_layers=2,
    cab_reduction=2,
)
TINY_EXTENT = 16


def _check_conv3d(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 2, 3, 4, 4))
    p = init_conv(rng, 2, 3, (3, 3, 3))
    return grad_check(lambda v: conv3d(v[0], p), [x], params=p, seed=int(rng.integers(1 << 31)))


def _check_conv3d_strided(rng: np.random.Generator) -> float:
    x = rng.standard_normal((1, 2, 2, 6, 5))
    p = init_conv(rng, 2, 2, (1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))
    return grad_check(lambda v: conv3d(v[0], p), [x], params=p, seed=int(rng.integers(1 << 31)))


def _check_transposed(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 3, 2, 3, 3))
    p = init_conv(rng, 3, 2, (1, 2, 2), stride=(1, 2, 2), padding=(0, 0, 0), transposed=True)
    return grad_check(lambda v: transposed_conv3d(v[0], p), [x], params=p, seed=int(rng.integers(1 << 31)))


def _check_batchnorm(rng: np.random.Generator) -> float:
    x = rng.standard_normal((4, 2, 2, 3, 3)) * 2.0 + 0.5
    p = init_bn(2)
    p.gamma.value = rng.uniform(0.5, 1.5, size=2)
    p.beta.value = rng.uniform(-0.5, 0.5, size=2)
    return grad_check(lambda v: batchnorm(v[0], p), [x], params=p, seed=int(rng.integers(1 << 31)))


def _check_relu(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 2, 1, 3, 3))
    return grad_check(lambda v: activation(v[0], "relu"), [x], where=[np.abs(x) > 0.1], seed=int(rng.integers(1 << 31)))


def _check_sigmoid(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 2, 1, 3, 3)) * 3.0
    return grad_check(lambda v: activation(v[0], "sigmoid"), [x], seed=int(rng.integers(1 << 31)))


def _check_maxpool(rng: np.random.Generator) -> float:
    shape = (2, 2, 2, 4, 4)
    # distinct values 0.1 apart keep every window's argmax stable under +-h
    x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.1
    return grad_check(lambda v: maxpool3d(v[0], (1, 2, 2)), [x], seed=int(rng.integers(1 << 31)))


def _check_global_pool(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 3, 2, 3, 3))
    return grad_check(lambda v: global_avg_pool3d(v[0]), [x], seed=int(rng.integers(1 << 31)))


def _check_mscb(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 2, 2, 4, 4))
    p = init_mscb(rng, 2, 3)
    return grad_check(
        lambda v: mscb_forward(v[0], p),
        [x],
        params=p,
        seed=int(rng.integers(1 << 31)),
        max_elements=SAMPLE,
        one_sided=True,
    )


def _check_cab(rng: np.random.Generator) -> float:
    enc = rng.standard_normal((2, 2, 1, 3, 3))
    dec = rng.standard_normal((2, 2, 1, 3, 3))
    p = init_cab(rng, 4, 2, reduction=2)
    return grad_check(lambda v: cab_forward(v[0], v[1], p), [enc, dec], params=p, seed=int(rng.integers(1 << 31)))


def _check_gpm(rng: np.random.Generator) -> float:
    x = rng.standard_normal((2, 3, 1, 2, 2))
    p = init_gpm(rng, 3)
    return grad_check(lambda v: gpm_forward(v[0], p), [x], params=p, seed=int(rng.integers(1 << 31)))


def _check_cross_entropy(rng: np.random.Generator) -> float:
    logits = rng.standard_normal((2, 3, 4, 4))
    labels = rng.integers(0, 3, size=(2, 4, 4)).astype(np.uint16)
    labels[0, 0, :2] = IGNORE_INDEX
    return grad_check(lambda v: cross_entropy(v[0], labels), [logits], seed=int(rng.integers(1 << 31)))


def _check_msfcn(rng: np.random.Generator) -> float:
    cfg = NetworkConfig(**{**TINY_NET.to_items(), "seed": int(rng.integers(1 << 31))})
    net = build_msfcn(cfg)
    n = TINY_EXTENT
    x = rng.standard_normal((2, cfg.in_channels, cfg.time_steps, n, n))
    labels = rng.integers(0, cfg.num_classes, size=(2, n, n)).astype(np.uint16)
    return grad_check(
        lambda v: cross_entropy(forward(net, v[0], "train"), labels),
        [x],
        params=net,
        seed=int(rng.integers(1 << 31)),
        max_elements=4,
        one_sided=True,
    )


CHECKS: dict[str, Callable[[np.random.Generator], float]] = {
    "conv3d": _check_conv3d,
    "conv3d_strided": _check_conv3d_strided,
    "transposed_conv3d": _check_transposed,
    "batchnorm_train": _check_batchnorm,
    "relu": _check_relu,
    "sigmoid": _check_sigmoid,
    "maxpool3d": _check_maxpool,
    "global_avg_pool3d": _check_global_pool,
    "mscb": _check_mscb,
    "cab": _check_cab,
    "gpm": _check_gpm,
    "softmax_cross_entropy": _check_cross_entropy,
    "msfcn": _check_msfcn,
}


def run_suite(seeds: Sequence[int] = SEEDS, names: Sequence[str] | None = None) -> list[CheckResult]:
    """Worst error per op over all seeds."""
    order = list(CHECKS)
    unknown = [n for n in names or () if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown gradcheck op {unknown[0]!r}, expected one of {order}")
    results = []
    for name in names or order:
        worst = 0.0
        for seed in seeds:
            err = CHECKS[name](np.random.default_rng([seed, order.index(name)]))
            log.debug("gradcheck op=%s seed=%d err=%.3e", name, seed, err)
            worst = max(worst, err)
        results.append(CheckResult(name, worst))
    return results
