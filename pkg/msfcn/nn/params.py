# msfcn/nn/params.py
"""Learnable-parameter records and the hierarchical name registry."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from msfcn.core.tensor import FLOAT
from msfcn.errors import ShapeError
from msfcn.nn.tape import Var

Triple = tuple[int, int, int]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ConvParams:
    weight: Var
    bias: Var
    stride: Triple = (1, 1, 1)
    padding: Triple = (0, 0, 0)
    transposed: bool = False

    def __post_init__(self) -> None:
        if self.weight.value.ndim != 5:
            raise ShapeError(f"conv weight must be rank 5, got {self.weight.shape}")
        if any(k < 1 for k in self.kernel):
            raise ShapeError(f"kernel extents must be >= 1, got {self.kernel}")
        if any(s < 1 for s in self.stride):
            raise ShapeError(f"strides must be >= 1, got {self.stride}")
        if any(p < 0 for p in self.padding):
            raise ShapeError(f"padding must be >= 0, got {self.padding}")
        if self.bias.shape != (self.c_out,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({self.c_out},)")

    @property
    def kernel(self) -> Triple:
        return tuple(self.weight.shape[2:])  # type: ignore[return-value]

    @property
    def c_in(self) -> int:
        return self.weight.shape[0] if self.transposed else self.weight.shape[1]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1] if self.transposed else self.weight.shape[0]


@dataclass
class BatchNormParams:
    gamma: Var
    beta: Var
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM
    mode: str = "train"

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ShapeError(f"batchnorm eps must be > 0, got {self.eps}")
        if not 0 < self.momentum < 1:
            raise ShapeError(f"batchnorm momentum must be in (0, 1), got {self.momentum}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def same_padding(kernel: Triple) -> Triple:
    return tuple(k // 2 for k in kernel)  # type: ignore[return-value]


def init_conv(
    rng: np.random.Generator,
    c_in: int,
    c_out: int,
    kernel: Triple,
    *,
    stride: Triple = (1, 1, 1),
    padding: Triple | None = None,
    transposed: bool = False,
) -> ConvParams:
    """Uniform init with bound sqrt(6 / fan_in), zero bias.

    padding=None means "same" padding for stride 1.
    """
    fan_in = c_in * int(np.prod(kernel))
    bound = np.sqrt(6.0 / fan_in)
    shape = (c_in, c_out, *kernel) if transposed else (c_out, c_in, *kernel)
    w = rng.uniform(-bound, bound, size=shape).astype(FLOAT)
    return ConvParams(
        weight=Var(w, requires_grad=True),
        bias=Var(np.zeros(c_out, dtype=FLOAT), requires_grad=True),
        stride=tuple(stride),
        padding=same_padding(kernel) if padding is None else tuple(padding),
        transposed=transposed,
    )


def init_bn(channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> BatchNormParams:
    return BatchNormParams(
        gamma=Var(np.ones(channels, dtype=FLOAT), requires_grad=True),
        beta=Var(np.zeros(channels, dtype=FLOAT), requires_grad=True),
        running_mean=np.zeros(channels, dtype=FLOAT),
        running_var=np.ones(channels, dtype=FLOAT),
        eps=eps,
        momentum=momentum,
    )


def walk(obj: Any, prefix: str = "") -> Iterator[tuple[str, Any]]:
    """Yield (dotted name, leaf) for every Var and ndarray reachable from obj.

    Dataclass fields are visited in declaration order and lists by index, so
    names are stable across builds of the same config.
    """
    if isinstance(obj, (Var, np.ndarray)):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from walk(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from walk(item, f"{prefix}.{i}" if prefix else str(i))


def named_parameters(obj: Any, prefix: str = "") -> dict[str, Var]:
    return {name: leaf for name, leaf in walk(obj, prefix) if isinstance(leaf, Var)}


def named_buffers(obj: Any, prefix: str = "") -> dict[str, np.ndarray]:
    return {name: leaf for name, leaf in walk(obj, prefix) if isinstance(leaf, np.ndarray)}


def batchnorms(obj: Any) -> Iterator[BatchNormParams]:
    if isinstance(obj, BatchNormParams):
        yield obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from batchnorms(getattr(obj, f.name))
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            yield from batchnorms(item)


def cast_state(obj: Any, dtype) -> None:
    """Re-type every parameter and buffer in place (used for 64-bit checks)."""
    for bn in batchnorms(obj):
        bn.running_mean = bn.running_mean.astype(dtype)
        bn.running_var = bn.running_var.astype(dtype)
    for var in named_parameters(obj).values():
        var.value = var.value.astype(dtype)
        var.grad = None
