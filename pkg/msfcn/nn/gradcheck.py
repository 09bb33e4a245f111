# msfcn/nn/gradcheck.py
"""Central-difference gradient checks at 64-bit."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from msfcn.nn.params import cast_state, named_parameters
from msfcn.nn.tape import GradTape, Var

STEP = 1e-4
TOLERANCE = 1e-3


@dataclass(frozen=True)
class CheckResult:
    op: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def grad_check(
    fn: Callable[[Sequence[Var]], Var],
    inputs: Sequence[np.ndarray],
    *,
    params: Any = None,
    seed: int = 0,
    h: float = STEP,
    where: Sequence[np.ndarray | None] | None = None,
    max_elements: int | None = None,
    one_sided: bool = False,
) -> float:
    """Max over checked elements of |analytic - numeric| / max(1, |numeric|).

    fn maps input Vars to an output Var. Non-scalar outputs are reduced with
    a fixed random projection so every output element contributes. params
    is any record holding Vars (a ConvParams, an MscbParams, a Network's
    parts); it is re-typed to float64 in place and its elements are checked
    along with the inputs. where optionally masks input elements to check
    (e.g. away from the ReLU kink); max_elements samples that many elements
    per tensor instead of all of them.

    one_sided lets an element that misses tolerance on the central
    difference pass on either one-sided difference instead. Composite
    checks with ReLU or max-pool units inside set it, since a perturbation
    can carry one of those units across its kink.
    """
    rng = np.random.default_rng(seed)
    if params is not None:
        cast_state(params, np.float64)
    xs = [Var(np.array(a, dtype=np.float64), requires_grad=True) for a in inputs]
    ps = list(named_parameters(params).values()) if params is not None else []

    with GradTape() as tape:
        out = fn(xs)
    proj = None if out.value.size == 1 else rng.standard_normal(out.shape)
    tape.backward(out, proj)

    def objective() -> float:
        y = fn(xs).value
        return float(y.sum()) if proj is None else float((y * proj).sum())

    masks = list(where) if where is not None else []
    masks += [None] * (len(xs) + len(ps) - len(masks))
    worst = 0.0
    for var, mask in zip(xs + ps, masks):
        analytic = np.zeros(var.shape) if var.grad is None else var.grad
        candidates = np.flatnonzero(np.ones(var.shape, bool) if mask is None else mask)
        if max_elements is not None and candidates.size > max_elements:
            candidates = rng.choice(candidates, size=max_elements, replace=False)
        flat = var.value.reshape(-1)
        for i in candidates:
            keep = flat[i]
            flat[i] = keep + h
            f_plus = objective()
            flat[i] = keep - h
            f_minus = objective()
            flat[i] = keep
            a = float(analytic.reshape(-1)[i])
            err = _rel_error(a, (f_plus - f_minus) / (2 * h))
            if one_sided and err > TOLERANCE:
                f_zero = objective()
                err = min(err, _rel_error(a, (f_plus - f_zero) / h), _rel_error(a, (f_zero - f_minus) / h))
            worst = max(worst, err)
    return worst


def _rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(numeric))


def format_table(results: Sequence[CheckResult]) -> str:
    width = max([len(r.op) for r in results] + [2])
    lines = [f"{'op':<{width}}  max_rel_error  result"]
    for r in results:
        lines.append(f"{r.op:<{width}}  {r.max_rel_error:13.3e}  {'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)
