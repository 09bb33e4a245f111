# msfcn/nn/blocks.py
"""Composite blocks: multi-scale conv block, channel attention, global pooling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from msfcn.errors import ShapeError
from msfcn.nn.ops import activation, add, batchnorm, concat, conv3d, global_avg_pool3d, mul
from msfcn.nn.params import BN_EPS, BN_MOMENTUM, BatchNormParams, ConvParams, Triple, init_bn, init_conv
from msfcn.nn.tape import Var

POINT: Triple = (1, 1, 1)


@dataclass
class ConvUnit:
    """conv -> optional BN -> optional activation."""

    conv: ConvParams
    bn: BatchNormParams | None = None
    act: str | None = None


def conv_unit(x: Var, u: ConvUnit) -> Var:
    y = conv3d(x, u.conv)
    if u.bn is not None:
        y = batchnorm(y, u.bn)
    if u.act is not None:
        y = activation(y, u.act)
    return y


def init_unit(
    rng: np.random.Generator,
    c_in: int,
    c_out: int,
    kernel: Triple,
    *,
    bn: bool = True,
    act: str | None = "relu",
    padding: Triple | None = None,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> ConvUnit:
    return ConvUnit(
        conv=init_conv(rng, c_in, c_out, kernel, padding=padding),
        bn=init_bn(c_out, eps, momentum) if bn else None,
        act=act,
    )


@dataclass
class MscbParams:
    top_conv_a: ConvUnit
    top_conv_b: ConvUnit
    bottom_conv: ConvUnit
    fuse_conv: ConvUnit
    branch_channels: int


def init_mscb(
    rng: np.random.Generator,
    c_in: int,
    c_out: int,
    *,
    branch_channels: int | None = None,
    kernel: Triple = (3, 3, 3),
    bn: bool = True,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> MscbParams:
    ck = c_out if branch_channels is None else branch_channels
    kw = dict(bn=bn, eps=eps, momentum=momentum)
    return MscbParams(
        top_conv_a=init_unit(rng, c_in, ck, kernel, **kw),
        top_conv_b=init_unit(rng, ck, ck, kernel, **kw),
        bottom_conv=init_unit(rng, c_in, ck, kernel, **kw),
        fuse_conv=init_unit(rng, ck, c_out, POINT, **kw),
        branch_channels=ck,
    )


def mscb_forward(x: Var, p: MscbParams) -> Var:
    """Two stacked 3x3x3 convs (5x5x5 receptive field) plus one 3x3x3, summed, then 1x1x1."""
    top = conv_unit(conv_unit(x, p.top_conv_a), p.top_conv_b)
    bottom = conv_unit(x, p.bottom_conv)
    if top.shape != bottom.shape:
        raise ShapeError(f"mscb branches disagree: top {top.shape} vs bottom {bottom.shape}")
    return conv_unit(add(top, bottom), p.fuse_conv)


@dataclass
class DoubleConvParams:
    first: ConvUnit
    second: ConvUnit


def init_double_conv(rng, c_in, c_out, *, kernel: Triple = (3, 3, 3), eps=BN_EPS, momentum=BN_MOMENTUM):
    return DoubleConvParams(
        first=init_unit(rng, c_in, c_out, kernel, eps=eps, momentum=momentum),
        second=init_unit(rng, c_out, c_out, kernel, eps=eps, momentum=momentum),
    )


def double_conv_forward(x: Var, p: DoubleConvParams) -> Var:
    return conv_unit(conv_unit(x, p.first), p.second)


@dataclass
class CabParams:
    squeeze_conv: ConvUnit
    excite_conv: ConvUnit
    out_conv: ConvUnit
    reduction: int


def init_cab(rng: np.random.Generator, channels: int, c_out: int, reduction: int = 4) -> CabParams:
    if reduction < 1 or channels % reduction:
        raise ShapeError(f"cab reduction {reduction} does not divide {channels} channels")
    mid = channels // reduction
    return CabParams(
        squeeze_conv=init_unit(rng, channels, mid, POINT, bn=False, act="relu"),
        excite_conv=init_unit(rng, mid, channels, POINT, bn=False, act="sigmoid"),
        out_conv=init_unit(rng, channels, c_out, POINT, bn=False, act=None),
        reduction=reduction,
    )


def cab_attention(x: Var, p: CabParams) -> Var:
    """Per-channel weights alpha in (0, 1), shaped (b, c, 1, 1, 1)."""
    return conv_unit(conv_unit(global_avg_pool3d(x), p.squeeze_conv), p.excite_conv)


def cab_forward(enc: Var, dec: Var, p: CabParams) -> Var:
    if enc.shape[2:] != dec.shape[2:]:
        raise ShapeError(f"cab inputs disagree on (t, h, w): {enc.shape} vs {dec.shape}")
    x = concat(enc, dec)
    alpha = cab_attention(x, p)
    return conv_unit(add(mul(x, alpha), x), p.out_conv)


@dataclass
class GpmParams:
    in_conv: ConvUnit
    gate_conv: ConvUnit
    out_conv: ConvUnit


def init_gpm(rng: np.random.Generator, channels: int) -> GpmParams:
    return GpmParams(
        in_conv=init_unit(rng, channels, channels, POINT, bn=False, act=None),
        gate_conv=init_unit(rng, channels, channels, POINT, bn=False, act="sigmoid"),
        out_conv=init_unit(rng, channels, channels, POINT, bn=False, act=None),
    )


def gpm_attention(y: Var, p: GpmParams) -> Var:
    return conv_unit(global_avg_pool3d(y), p.gate_conv)


def gpm_forward(x: Var, p: GpmParams) -> Var:
    if x.shape[1] != p.in_conv.conv.c_in:
        raise ShapeError(f"gpm expects {p.in_conv.conv.c_in} channels, got {x.shape[1]}")
    y = conv_unit(x, p.in_conv)
    alpha = gpm_attention(y, p)
    return conv_unit(add(mul(y, alpha), y), p.out_conv)
