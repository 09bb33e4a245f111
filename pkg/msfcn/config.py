# msfcn/config.py
"""Flat `key = value` run configuration with dotted keys and named presets."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from dotenv import load_dotenv

from msfcn.data.augment import AugmentSpec
from msfcn.errors import ConfigError
from msfcn.model.network import NetworkConfig
from msfcn.train.protocol import TrainRunConfig

ROOT = Path(__file__).resolve().parent.parent
THREADS_ENV = "MSFCN_THREADS"


def _bool(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _ints(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.split(",") if x.strip())


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(x) for x in raw.split(",") if x.strip())


def _names(raw: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in raw.split(",") if x.strip())


def _pair(raw: str) -> tuple[float, float]:
    vals = _floats(raw)
    if len(vals) != 2:
        raise ValueError(f"expected two comma-separated numbers, got {raw!r}")
    return vals  # type: ignore[return-value]


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: str
    help: str = ""


KEYS: dict[str, Key] = {
    "seed": Key(int, "0", "drives network init, batch order and augmentation draws"),
    "net.in_channels": Key(int, "3"),
    "net.time_steps": Key(int, "1"),
    "net.num_classes": Key(int, "6"),
    "net.channels": Key(_ints, "32,64,128,256"),
    "net.layers": Key(int, "4"),
    "net.mscb_width": Key(str, "out", "out | half"),
    "net.decoder_width": Key(str, "halved", "halved | mirror"),
    "net.cab_reduction": Key(int, "4"),
    "net.use_mscb": Key(_bool, "true"),
    "net.use_cab": Key(_bool, "true"),
    "net.use_gpm": Key(_bool, "true"),
    "net.time_collapse": Key(str, "none", "none | mean"),
    "bn.eps": Key(float, "1e-5"),
    "bn.momentum": Key(float, "0.1"),
    "train.batch_size": Key(int, "16"),
    "train.max_epochs": Key(int, "100"),
    "train.patience": Key(int, "10"),
    "train.lr": Key(float, "0.0001"),
    "train.beta1": Key(float, "0.9"),
    "train.beta2": Key(float, "0.999"),
    "train.eps": Key(float, "1e-8"),
    "train.monitor": Key(str, "val_oa"),
    "data.manifest": Key(str, ""),
    "data.patch": Key(int, "256"),
    "aug.transforms": Key(_names, ""),
    "aug.gain": Key(_pair, "0.9,1.1"),
    "aug.blur_sigma": Key(_pair, "0.5,1.5"),
    "aug.noise_std": Key(_pair, "0,0.05"),
}

PRESETS: dict[str, dict[str, str]] = {
    "2d_default": {
        "net.in_channels": "3",
        "net.time_steps": "1",
        "net.num_classes": "6",
        "train.batch_size": "16",
    },
    "3d_default": {
        "net.in_channels": "4",
        "net.time_steps": "4",
        "net.num_classes": "5",
        "train.batch_size": "4",
    },
    "msfcn3": {"net.layers": "3", "net.channels": "32,64,128"},
    "msfcn5": {"net.layers": "5", "net.channels": "32,64,128,256,512"},
    "narrow": {"net.channels": "16,32,64,128"},
    "wide": {"net.channels": "64,128,256,512"},
    "desk_shapes": {
        "net.in_channels": "3",
        "net.num_classes": "4",
        "net.layers": "2",
        "net.channels": "8,16",
        "net.decoder_width": "mirror",
        "train.batch_size": "4",
        "train.max_epochs": "200",
        "train.patience": "200",
        "train.lr": "0.01",
        "data.patch": "64",
    },
    "desk_temporal": {
        "net.in_channels": "1",
        "net.time_steps": "4",
        "net.num_classes": "2",
        "net.layers": "2",
        "net.channels": "8,16",
        "net.decoder_width": "mirror",
        "train.batch_size": "4",
        "train.max_epochs": "40",
        "train.patience": "40",
        "train.lr": "0.01",
        "data.patch": "32",
    },
}


@dataclass
class RunConfig:
    raw: dict[str, str] = field(default_factory=lambda: {k: v.default for k, v in KEYS.items()})

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
            k, _, v = line.partition("=")
            cfg.set(k.strip(), v.strip())
        return cfg

    @classmethod
    def from_preset(cls, name: str) -> "RunConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
        cfg = cls()
        cfg.update(PRESETS[name].items())
        return cfg

    @classmethod
    def resolve(cls, ref: str | None) -> "RunConfig":
        """A preset name, a config file path, or None for the defaults."""
        if not ref:
            return cls()
        if ref in PRESETS:
            return cls.from_preset(ref)
        path = Path(ref)
        if not path.exists():
            raise ConfigError(f"config {ref!r} is neither a preset nor an existing file")
        return cls.from_text(path.read_text(encoding="utf-8"), source=str(path))

    def set(self, key: str, value: str) -> None:
        spec = KEYS.get(key)
        if spec is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            spec.parse(value)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({e})") from e
        self.raw[key] = value

    def update(self, items: Iterable[tuple[str, str]]) -> None:
        for k, v in items:
            self.set(k, v)

    def get(self, key: str) -> Any:
        return KEYS[key].parse(self.raw[key])

    def to_text(self) -> str:
        lines = ["# msfcn run config"]
        lines += [f"{k} = {self.raw[k]}" for k in KEYS]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            in_channels=self.get("net.in_channels"),
            time_steps=self.get("net.time_steps"),
            num_classes=self.get("net.num_classes"),
            encoder_channels=self.get("net.channels"),
            num_layers=self.get("net.layers"),
            mscb_width=self.get("net.mscb_width"),
            decoder_width=self.get("net.decoder_width"),
            cab_reduction=self.get("net.cab_reduction"),
            use_mscb=self.get("net.use_mscb"),
            use_cab=self.get("net.use_cab"),
            use_gpm=self.get("net.use_gpm"),
            time_collapse=self.get("net.time_collapse"),
            bn_eps=self.get("bn.eps"),
            bn_momentum=self.get("bn.momentum"),
            seed=self.get("seed"),
        )

    def training(self, checkpoint_dir: Path | None = None) -> TrainRunConfig:
        return TrainRunConfig(
            batch_size=self.get("train.batch_size"),
            max_epochs=self.get("train.max_epochs"),
            patience=self.get("train.patience"),
            seed=self.get("seed"),
            lr=self.get("train.lr"),
            beta1=self.get("train.beta1"),
            beta2=self.get("train.beta2"),
            eps=self.get("train.eps"),
            monitor=self.get("train.monitor"),
            checkpoint_dir=checkpoint_dir,
        )

    def augment(self) -> AugmentSpec:
        return AugmentSpec(
            enabled=self.get("aug.transforms"),
            gain=self.get("aug.gain"),
            blur_sigma=self.get("aug.blur_sigma"),
            noise_std=self.get("aug.noise_std"),
            seed=self.get("seed"),
        )


def network_config_text(cfg: NetworkConfig) -> str:
    """The net.* and bn.* keys that rebuild cfg, in RunConfig syntax."""
    run = RunConfig()
    run.update(
        [
            ("seed", str(cfg.seed)),
            ("net.in_channels", str(cfg.in_channels)),
            ("net.time_steps", str(cfg.time_steps)),
            ("net.num_classes", str(cfg.num_classes)),
            ("net.channels", ",".join(str(c) for c in cfg.encoder_channels)),
            ("net.layers", str(cfg.num_layers)),
            ("net.mscb_width", cfg.mscb_width),
            ("net.decoder_width", cfg.decoder_width),
            ("net.cab_reduction", str(cfg.cab_reduction)),
            ("net.use_mscb", str(cfg.use_mscb).lower()),
            ("net.use_cab", str(cfg.use_cab).lower()),
            ("net.use_gpm", str(cfg.use_gpm).lower()),
            ("net.time_collapse", cfg.time_collapse),
            ("bn.eps", repr(cfg.bn_eps)),
            ("bn.momentum", repr(cfg.bn_momentum)),
        ]
    )
    return run.to_text()


def load_env() -> None:
    """Pick up .env.local at the repo root; the real environment wins."""
    load_dotenv(ROOT / ".env.local", override=False)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from e
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n
