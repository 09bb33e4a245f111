# msfcn/model/checkpoint.py
"""Checkpoint directories: one TNS file per registry entry plus a manifest.

manifest.txt lines are `<param-name>\t<file>\t<shape>` with shape written
as extents joined by 'x'; config.txt echoes the network configuration.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from msfcn.config import RunConfig, network_config_text
from msfcn.core.tensor import FLOAT
from msfcn.core.tns import load_tensor, save_tensor
from msfcn.errors import CheckpointError, ConfigError, FormatError
from msfcn.model.network import Network, NetworkConfig, build_msfcn
from msfcn.nn.tape import Var

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
CONFIG = "config.txt"


def _shape_str(shape) -> str:
    return "x".join(str(int(s)) for s in shape)


def save_checkpoint(net: Network, directory: str | Path, config_text: str | None = None) -> Path:
    """Write every parameter and BN running statistic. config_text defaults to the net.* echo."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, leaf in net.state().items():
        arr = leaf.value if isinstance(leaf, Var) else leaf
        fname = f"{name}.tns"
        save_tensor(np.asarray(arr, dtype=FLOAT), directory / fname)
        lines.append(f"{name}\t{fname}\t{_shape_str(arr.shape)}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (directory / CONFIG).write_text(config_text or network_config_text(net.cfg), encoding="utf-8")
    log.debug("checkpoint saved dir=%s entries=%d", directory, len(lines))
    return directory


def read_manifest(directory: Path) -> dict[str, tuple[str, str]]:
    path = directory / MANIFEST
    if not path.exists():
        raise CheckpointError(f"{directory}: missing {MANIFEST}")
    entries: dict[str, tuple[str, str]] = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise CheckpointError(f"{path}:{n}: expected 3 tab-separated fields")
        entries[parts[0]] = (parts[1], parts[2])
    return entries


def load_checkpoint(directory: str | Path, cfg: NetworkConfig | None = None) -> Network:
    """Rebuild the network (from config.txt unless cfg is given) and restore every tensor."""
    directory = Path(directory)
    if cfg is None:
        cfg_path = directory / CONFIG
        if not cfg_path.exists():
            raise CheckpointError(f"{directory}: missing {CONFIG}")
        try:
            cfg = RunConfig.from_text(cfg_path.read_text(encoding="utf-8"), source=str(cfg_path)).network()
        except ConfigError as e:
            raise CheckpointError(f"{directory}: unusable {CONFIG}: {e}") from e
    net = build_msfcn(cfg)
    entries = read_manifest(directory)
    state = net.state()
    extra = sorted(set(entries) - set(state))
    if extra:
        raise CheckpointError(f"{directory}: checkpoint has {len(extra)} entries the config lacks, e.g. {extra[0]!r}")
    for name, leaf in state.items():
        if name not in entries:
            raise CheckpointError(f"{directory}: manifest is missing parameter {name!r}")
        fname, shape = entries[name]
        target = leaf.value if isinstance(leaf, Var) else leaf
        if shape != _shape_str(target.shape):
            raise CheckpointError(f"{name}: checkpoint shape {shape} != config shape {_shape_str(target.shape)}")
        try:
            arr = load_tensor(directory / fname)
        except FormatError as e:
            raise CheckpointError(f"{name}: {e}") from e
        if arr.shape != target.shape:
            raise CheckpointError(f"{name}: file shape {arr.shape} != manifest shape {shape}")
        if isinstance(leaf, Var):
            leaf.value = arr.astype(FLOAT)
        else:
            leaf[...] = arr
    return net
