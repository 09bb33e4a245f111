# msfcn/model/accounting.py
"""Parameter and multiply-accumulate accounting without running the network."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from msfcn.errors import ShapeError
from msfcn.model.network import Network
from msfcn.nn.blocks import CabParams, ConvUnit, DoubleConvParams, GpmParams, MscbParams
from msfcn.nn.ops import out_extent
from msfcn.nn.params import ConvParams

MAC_CONVENTION = "MAC (1 multiply-add = 1 op)"

# Published counts (millions of parameters, G complexity) by preset.
REFERENCES = {
    "2d_default": (2.67, 9.66),
    "3d_default": (6.58, 91.46),
    "msfcn3": (2.52, 6.77),
    "msfcn5": (10.73, 12.55),
    "narrow": (0.67, 2.46),
    "wide": (10.65, 38.24),
}


@dataclass
class FlopCount:
    macs: int = 0
    elementwise: int = 0
    per_stage: "OrderedDict[str, int]" = field(default_factory=OrderedDict)

    @property
    def giga_macs(self) -> float:
        return self.macs / 1e9

    @property
    def total(self) -> int:
        return self.macs + self.elementwise


class _Meter:
    def __init__(self) -> None:
        self.count = FlopCount()
        self.stage = ""

    def _add_macs(self, n: int) -> None:
        self.count.macs += n
        self.count.per_stage[self.stage] = self.count.per_stage.get(self.stage, 0) + n

    def elementwise(self, shape: Sequence[int], times: int = 1) -> None:
        self.count.elementwise += times * int(np.prod(shape))

    def conv(self, p: ConvParams, shape: Sequence[int]) -> tuple[int, ...]:
        b, c, *ext = shape
        if c != p.c_in:
            raise ShapeError(f"conv expects {p.c_in} channels, got {c}")
        out = tuple(out_extent(n, k, s, pd) for n, k, s, pd in zip(ext, p.kernel, p.stride, p.padding))
        self._add_macs(b * p.c_out * p.c_in * int(np.prod(p.kernel)) * int(np.prod(out)))
        return (b, p.c_out, *out)

    def transposed(self, p: ConvParams, shape: Sequence[int]) -> tuple[int, ...]:
        b, c, *ext = shape
        out = tuple((n - 1) * s + k - 2 * pd for n, k, s, pd in zip(ext, p.kernel, p.stride, p.padding))
        # every input element scatters c_out * prod(kernel) products
        self._add_macs(b * p.c_out * c * int(np.prod(p.kernel)) * int(np.prod(ext)))
        return (b, p.c_out, *out)

    def unit(self, u: ConvUnit, shape) -> tuple[int, ...]:
        shape = self.conv(u.conv, shape)
        if u.bn is not None:
            self.elementwise(shape)
        if u.act is not None:
            self.elementwise(shape)
        return shape

    def mscb(self, p: MscbParams, shape) -> tuple[int, ...]:
        top = self.unit(p.top_conv_b, self.unit(p.top_conv_a, shape))
        self.unit(p.bottom_conv, shape)
        self.elementwise(top)
        return self.unit(p.fuse_conv, top)

    def double(self, p: DoubleConvParams, shape) -> tuple[int, ...]:
        return self.unit(p.second, self.unit(p.first, shape))

    def attention(self, squeeze: list[ConvUnit], shape) -> None:
        self.elementwise(shape)
        pooled = (shape[0], shape[1], 1, 1, 1)
        for u in squeeze:
            pooled = self.unit(u, pooled)
        self.elementwise(shape, times=2)

    def cab(self, p: CabParams, enc, dec) -> tuple[int, ...]:
        x = (enc[0], enc[1] + dec[1], *enc[2:])
        self.attention([p.squeeze_conv, p.excite_conv], x)
        return self.unit(p.out_conv, x)

    def gpm(self, p: GpmParams, shape) -> tuple[int, ...]:
        y = self.unit(p.in_conv, shape)
        self.attention([p.gate_conv], y)
        return self.unit(p.out_conv, y)

    def pool(self, shape) -> tuple[int, ...]:
        self.elementwise(shape)
        b, c, t, h, w = shape
        return (b, c, t, h // 2, w // 2)


def count_flops(net: Network, extents: Sequence[int]) -> FlopCount:
    """Walk the network structure over (c, t, h, w) or (b, c, t, h, w) extents."""
    shape = tuple(int(e) for e in extents)
    if len(shape) == 4:
        shape = (1, *shape)
    net.cfg.check_input(shape)
    m = _Meter()
    if net.cfg.time_collapse == "mean":
        m.stage = "input"
        m.elementwise(shape)
        shape = (shape[0], shape[1], 1, *shape[3:])

    skips = []
    for i, stage in enumerate(net.encoder):
        m.stage = f"encoder.{i}"
        if isinstance(stage.block, MscbParams):
            shape = m.mscb(stage.block, shape)
        else:
            shape = m.double(stage.block, shape)
        skips.append(shape)
        shape = m.pool(shape)
    if net.bridge is not None:
        m.stage = "bridge"
        shape = m.gpm(net.bridge, shape)
    for i, (stage, skip) in enumerate(zip(net.decoder, reversed(skips))):
        m.stage = f"decoder.{i}"
        shape = m.transposed(stage.up, shape)
        shape = m.unit(stage.refine, shape)
        if isinstance(stage.fuse, CabParams):
            shape = m.cab(stage.fuse, skip, shape)
        else:
            shape = m.unit(stage.fuse, (shape[0], skip[1] + shape[1], *shape[2:]))
    m.stage = "head"
    shape = m.unit(net.head.temporal, shape)
    m.conv(net.head.classify, shape)
    return m.count


def count_macs_conv(p: ConvParams, extents: Sequence[int]) -> int:
    """MACs of one conv over (c, t, h, w) extents."""
    m = _Meter()
    m.conv(p, (1, *extents))
    return m.count.macs


def params_by_stage(net: Network) -> "OrderedDict[str, int]":
    out: OrderedDict[str, int] = OrderedDict()
    for name, var in net.parameters().items():
        parts = name.split(".")
        key = ".".join(parts[:2]) if parts[0] in ("encoder", "decoder") else parts[0]
        out[key] = out.get(key, 0) + int(var.value.size)
    return out
