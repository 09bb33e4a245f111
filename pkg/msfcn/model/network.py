# msfcn/model/network.py
"""Encoder-decoder assembly with temporal-collapse head."""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from msfcn.core.tensor import FLOAT
from msfcn.errors import ConfigError, ShapeError
from msfcn.nn.blocks import (
    POINT,
    CabParams,
    ConvUnit,
    DoubleConvParams,
    GpmParams,
    MscbParams,
    cab_forward,
    conv_unit,
    double_conv_forward,
    gpm_forward,
    init_cab,
    init_double_conv,
    init_gpm,
    init_mscb,
    init_unit,
    mscb_forward,
)
from msfcn.nn.ops import concat, conv3d, maxpool3d, reshape, transposed_conv3d
from msfcn.nn.params import (
    ConvParams,
    batchnorms,
    init_conv,
    named_buffers,
    named_parameters,
    walk,
)
from msfcn.nn.tape import Var

log = logging.getLogger(__name__)

MSCB_WIDTHS = ("out", "half")
DECODER_WIDTHS = ("halved", "mirror")
TIME_COLLAPSE = ("none", "mean")
MODES = ("train", "eval")


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 3
    time_steps: int = 1
    num_classes: int = 6
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256)
    num_layers: int = 4
    mscb_width: str = "out"
    decoder_width: str = "halved"
    cab_reduction: int = 4
    use_mscb: bool = True
    use_cab: bool = True
    use_gpm: bool = True
    time_collapse: str = "none"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        self.validate()

    def validate(self) -> None:
        if len(self.encoder_channels) != self.num_layers:
            raise ConfigError(
                f"encoder_channels has {len(self.encoder_channels)} entries, num_layers is {self.num_layers}"
            )
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        for name in ("in_channels", "time_steps", "cab_reduction"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(c < 1 for c in self.encoder_channels):
            raise ConfigError(f"encoder_channels must be positive, got {self.encoder_channels}")
        if self.mscb_width not in MSCB_WIDTHS:
            raise ConfigError(f"mscb_width must be one of {MSCB_WIDTHS}, got {self.mscb_width!r}")
        if self.decoder_width not in DECODER_WIDTHS:
            raise ConfigError(f"decoder_width must be one of {DECODER_WIDTHS}, got {self.decoder_width!r}")
        if self.time_collapse not in TIME_COLLAPSE:
            raise ConfigError(f"time_collapse must be one of {TIME_COLLAPSE}, got {self.time_collapse!r}")
        if self.use_cab:
            for c, u in zip(self.encoder_channels, self.decoder_channels):
                if (c + u) % self.cab_reduction:
                    raise ConfigError(f"cab_reduction {self.cab_reduction} does not divide {c + u} channels")

    @property
    def decoder_channels(self) -> tuple[int, ...]:
        """Decoder output width per level, in encoder order."""
        if self.decoder_width == "mirror":
            return self.encoder_channels
        return tuple(max(1, c // 2) for c in self.encoder_channels)

    @property
    def head_channels(self) -> int:
        return self.decoder_channels[0]

    @property
    def net_time_steps(self) -> int:
        return 1 if self.time_collapse == "mean" else self.time_steps

    @property
    def temporal_kernel(self) -> int:
        return 3 if self.net_time_steps > 1 else 1

    @property
    def spatial_multiple(self) -> int:
        return 2**self.num_layers

    def check_input(self, shape) -> None:
        if len(shape) != 5:
            raise ShapeError(f"network input must be (b, c, t, h, w), got {tuple(shape)}")
        _, c, t, h, w = shape
        if (c, t) != (self.in_channels, self.time_steps):
            raise ShapeError(f"input (c={c}, t={t}) does not match config (c={self.in_channels}, t={self.time_steps})")
        m = self.spatial_multiple
        if h % m or w % m:
            raise ShapeError(f"input {h}x{w} is not divisible by 2^{self.num_layers} = {m}")

    def check_extents(self, h: int, w: int) -> None:
        m = self.spatial_multiple
        if h % m or w % m:
            raise ConfigError(f"spatial extents {h}x{w} are not divisible by 2^{self.num_layers} = {m}")

    def to_items(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EncoderStage:
    block: MscbParams | DoubleConvParams


@dataclass
class DecoderStage:
    up: ConvParams
    refine: ConvUnit
    fuse: CabParams | ConvUnit


@dataclass
class Head:
    temporal: ConvUnit
    classify: ConvParams


@dataclass
class Network:
    cfg: NetworkConfig
    encoder: list[EncoderStage]
    bridge: GpmParams | None
    decoder: list[DecoderStage]
    head: Head

    def parameters(self) -> dict[str, Var]:
        """Learnable tensors by hierarchical name, in build order."""
        return named_parameters(self._parts())

    def buffers(self) -> dict[str, np.ndarray]:
        return named_buffers(self._parts())

    def state(self) -> dict[str, Var | np.ndarray]:
        """Parameters and BN running statistics, in build order."""
        return dict(walk(self._parts()))

    def _parts(self) -> "_Parts":
        return _Parts(self.encoder, self.bridge, self.decoder, self.head)

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        for bn in batchnorms(self._parts()):
            bn.mode = mode

    def zero_grad(self) -> None:
        for v in self.parameters().values():
            v.zero_grad()

    def __call__(self, batch, mode: str = "eval") -> Var:
        return forward(self, batch, mode)


@dataclass
class _Parts:
    encoder: list[EncoderStage]
    bridge: GpmParams | None
    decoder: list[DecoderStage]
    head: Head


def build_msfcn(cfg: NetworkConfig) -> Network:
    rng = np.random.default_rng(cfg.seed)
    kt = cfg.temporal_kernel
    k3 = (kt, 3, 3)
    bn_kw = dict(eps=cfg.bn_eps, momentum=cfg.bn_momentum)

    encoder = []
    c_prev = cfg.in_channels
    for c in cfg.encoder_channels:
        if cfg.use_mscb:
            ck = c if cfg.mscb_width == "out" else max(1, c // 2)
            block = init_mscb(rng, c_prev, c, branch_channels=ck, kernel=k3, **bn_kw)
        else:
            block = init_double_conv(rng, c_prev, c, kernel=k3, **bn_kw)
        encoder.append(EncoderStage(block))
        c_prev = c

    top = cfg.encoder_channels[-1]
    bridge = init_gpm(rng, top) if cfg.use_gpm else None

    decoder = []
    d_in = top
    for c, u in zip(reversed(cfg.encoder_channels), reversed(cfg.decoder_channels)):
        up = init_conv(rng, d_in, u, (1, 2, 2), stride=(1, 2, 2), padding=(0, 0, 0), transposed=True)
        refine = init_unit(rng, u, u, k3, **bn_kw)
        # skip (c) and upsampled (u) channels fuse back to the decoder width
        if cfg.use_cab:
            fuse = init_cab(rng, c + u, u, cfg.cab_reduction)
        else:
            fuse = init_unit(rng, c + u, u, POINT, **bn_kw)
        decoder.append(DecoderStage(up, refine, fuse))
        d_in = u

    t = cfg.net_time_steps
    first = cfg.head_channels
    head = Head(
        temporal=init_unit(rng, first, first, (t, 3, 3), padding=(0, 1, 1), **bn_kw),
        classify=init_conv(rng, first, cfg.num_classes, POINT),
    )
    net = Network(cfg, encoder, bridge, decoder, head)
    log.debug("built msfcn layers=%d params=%d", cfg.num_layers, count_params(net))
    return net


def _encode(x: Var, stage: EncoderStage) -> Var:
    if isinstance(stage.block, MscbParams):
        return mscb_forward(x, stage.block)
    return double_conv_forward(x, stage.block)


def _fuse(skip: Var, dec: Var, fuse: CabParams | ConvUnit) -> Var:
    if isinstance(fuse, CabParams):
        return cab_forward(skip, dec, fuse)
    return conv_unit(concat(skip, dec), fuse)


def forward(net: Network, batch, mode: str = "eval") -> Var:
    """Logits (b, K, h, w). Train mode uses batch statistics and updates running ones."""
    x = batch if isinstance(batch, Var) else Var(np.asarray(batch, dtype=FLOAT))
    net.cfg.check_input(x.shape)
    net.set_mode(mode)
    if net.cfg.time_collapse == "mean":
        x = Var(x.value.mean(axis=2, keepdims=True))

    skips = []
    h = x
    for stage in net.encoder:
        h = _encode(h, stage)
        skips.append(h)
        h = maxpool3d(h, (1, 2, 2))
    if net.bridge is not None:
        h = gpm_forward(h, net.bridge)
    for stage, skip in zip(net.decoder, reversed(skips)):
        h = transposed_conv3d(h, stage.up)
        h = conv_unit(h, stage.refine)
        h = _fuse(skip, h, stage.fuse)
    h = conv_unit(h, net.head.temporal)
    logits = conv3d(h, net.head.classify)
    b, k, _, hh, ww = logits.shape
    return reshape(logits, (b, k, hh, ww))


def count_params(net: Network) -> int:
    return sum(int(v.value.size) for v in net.parameters().values())
