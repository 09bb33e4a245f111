# msfcn/train/adam.py
"""Adam with bias-corrected moments."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from msfcn.errors import ShapeError
from msfcn.nn.tape import Var


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Mapping[str, Var], **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        return state


def adam_step(
    params: Mapping[str, Var],
    grads: Mapping[str, np.ndarray | None] | None,
    state: AdamState,
) -> AdamState:
    """One update of every parameter in place. grads=None reads each Var's .grad; a missing grad counts as zero."""
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        elif g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.value))
        v = state.v.setdefault(name, np.zeros_like(p.value))
        if m.shape != p.shape:
            raise ShapeError(f"{name}: optimizer state {m.shape} does not match parameter {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state
