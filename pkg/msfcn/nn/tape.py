# msfcn/nn/tape.py
"""Reverse-mode differentiation by an explicit operation tape.

Ops executed while a GradTape is active append one entry each; backward
walks the entries in exact reverse order and accumulates input gradients.
A tape belongs to one thread of control (it lives in a ContextVar).
"""
from __future__ import annotations

from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from msfcn.errors import ShapeError

_ACTIVE: ContextVar[Optional["GradTape"]] = ContextVar("msfcn_active_tape", default=None)


class Var:
    """A tensor value plus its accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Var, ...]
    output: Var
    backward: BackwardFn


class GradTape:
    def __init__(self) -> None:
        self.entries: list[TapeEntry] = []
        self._token = None

    def __enter__(self) -> "GradTape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def record(self, op: str, inputs: Sequence[Var], output: Var, backward: BackwardFn) -> None:
        if not any(v.requires_grad for v in inputs):
            return
        output.requires_grad = True
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward))

    def backward(self, output: Var, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if output.value.size != 1:
                raise ShapeError(f"backward from non-scalar output {output.shape} needs an explicit grad")
            grad = np.ones_like(output.value)
        elif np.shape(grad) != output.shape:
            raise ShapeError(f"upstream grad {np.shape(grad)} does not match output {output.shape}")
        output.grad = np.asarray(grad, dtype=output.dtype)
        for entry in reversed(self.entries):
            g_out = entry.output.grad
            if g_out is None:
                continue
            for var, g in zip(entry.inputs, entry.backward(g_out)):
                if g is None or not var.requires_grad:
                    continue
                if g.shape != var.shape:
                    raise ShapeError(f"{entry.op} backward produced {g.shape} for input {var.shape}")
                var.grad = g if var.grad is None else var.grad + g


def active_tape() -> GradTape | None:
    return _ACTIVE.get()


def record(op: str, inputs: Sequence[Var], output: Var, backward: BackwardFn) -> Var:
    tape = _ACTIVE.get()
    if tape is not None:
        tape.record(op, inputs, output, backward)
    return output
