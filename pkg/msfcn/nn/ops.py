# msfcn/nn/ops.py
"""Differentiable primitives on batched (b, c, t, h, w) arrays.

Every op takes and returns Var, computes its forward with numpy and, when a
GradTape is active, records a backward rule. Results keep the input dtype,
so the same code runs at 32-bit for training and 64-bit for grad checks.
"""
from __future__ import annotations

import logging

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from msfcn.core.tensor import IGNORE_INDEX
from msfcn.errors import DataError, ShapeError
from msfcn.nn.params import BatchNormParams, ConvParams, Triple
from msfcn.nn.tape import Var, record

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid")
CHANNELS = (0, 2, 3, 4)
COLUMN_BLOCK = 1 << 24


def out_extent(n: int, k: int, s: int, p: int) -> int:
    span = n + 2 * p - k
    if span < 0:
        raise ShapeError(f"kernel extent {k} is larger than padded input extent {n + 2 * p}")
    return span // s + 1


def _check_rank5(x: np.ndarray, op: str) -> None:
    if x.ndim != 5:
        raise ShapeError(f"{op} expects (b, c, t, h, w), got shape {x.shape}")


def _windows(xp: np.ndarray, kernel: Triple, stride: Triple) -> np.ndarray:
    """Read-only view (b, c, t', h', w', kt, kh, kw) of every kernel placement."""
    st, sh, sw = stride
    return sliding_window_view(xp, tuple(kernel), axis=(2, 3, 4))[:, :, ::st, ::sh, ::sw]


def _row_step(b: int, c: int, kernel: Triple, out: Triple) -> int:
    """Output rows per im2col block, keeping each column matrix near COLUMN_BLOCK elements."""
    t2, _, w2 = out
    per_row = b * c * int(np.prod(kernel)) * t2 * w2
    return max(1, COLUMN_BLOCK // max(1, per_row))


def _conv_out(x_shape, kernel: Triple, stride: Triple, padding: Triple) -> Triple:
    return tuple(out_extent(n, k, s, p) for n, k, s, p in zip(x_shape[2:], kernel, stride, padding))  # type: ignore[return-value]


def _pad(x: np.ndarray, padding: Triple) -> np.ndarray:
    if not any(padding):
        return x
    pt, ph, pw = padding
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _dilate(g: np.ndarray, stride: Triple) -> np.ndarray:
    if all(s == 1 for s in stride):
        return g
    st, sh, sw = stride
    b, c, *ext = g.shape
    d = np.zeros((b, c, *((n - 1) * s + 1 for n, s in zip(ext, stride))), dtype=g.dtype)
    d[:, :, ::st, ::sh, ::sw] = g
    return d


def conv_forward(x: np.ndarray, w: np.ndarray, stride: Triple, padding: Triple) -> np.ndarray:
    """Correlation of x with w (c_out, c_in, kt, kh, kw), no bias.

    Each block of output rows is one im2col GEMM contracting the contiguous
    (c_in, kt, kh, kw) axis, so the summation order is fixed for a given shape.
    """
    b, c = x.shape[:2]
    o, c_w = w.shape[:2]
    if c != c_w:
        raise ShapeError(f"conv input has {c} channels, weights expect {c_w}")
    kernel = w.shape[2:]
    out = _conv_out(x.shape, kernel, stride, padding)
    win = _windows(_pad(x, padding), kernel, stride)
    y = np.empty((b, o, *out), dtype=np.result_type(x, w))
    step = _row_step(b, c, kernel, out)
    for h0 in range(0, out[1], step):
        rows = slice(h0, h0 + step)
        part = np.tensordot(w, win[:, :, :, rows], axes=((1, 2, 3, 4), (1, 5, 6, 7)))
        y[:, :, :, rows] = part.transpose(1, 0, 2, 3, 4)
    return y


def conv_grad_input(gy: np.ndarray, w: np.ndarray, x_shape, stride: Triple, padding: Triple) -> np.ndarray:
    """Adjoint of conv_forward in x: full correlation of the stride-dilated gy with the flipped kernel."""
    kernel = w.shape[2:]
    d = _dilate(gy, stride)
    pads = [(0, 0), (0, 0)]
    for n, k, p, e in zip(x_shape[2:], kernel, padding, d.shape[2:]):
        # trailing input positions no window reached get zero gradient
        pads.append((k - 1, k - 1 + n + 2 * p - (e + k - 1)))
    flipped = np.flip(w, axis=(2, 3, 4)).swapaxes(0, 1)
    gxp = conv_forward(np.pad(d, pads), flipped, (1, 1, 1), (0, 0, 0))
    pt, ph, pw = padding
    t, h, wd = x_shape[2:]
    return gxp[:, :, pt : pt + t, ph : ph + h, pw : pw + wd]


def conv_grad_weight(x: np.ndarray, gy: np.ndarray, w_shape, stride: Triple, padding: Triple) -> np.ndarray:
    b, c = x.shape[:2]
    kernel = w_shape[2:]
    out = gy.shape[2:]
    win = _windows(_pad(x, padding), kernel, stride)
    gw = np.zeros(w_shape, dtype=np.result_type(x, gy))
    step = _row_step(b, c, kernel, out)
    for h0 in range(0, out[1], step):
        rows = slice(h0, h0 + step)
        gw += np.tensordot(gy[:, :, :, rows], win[:, :, :, rows], axes=((0, 2, 3, 4), (0, 2, 3, 4)))
    return gw


def _bias(v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1, 1)


def conv3d(x: Var, p: ConvParams) -> Var:
    _check_rank5(x.value, "conv3d")
    y = conv_forward(x.value, p.weight.value, p.stride, p.padding) + _bias(p.bias.value)
    out = Var(y)

    def backward(gy):
        return conv3d_backward(gy, x.value, p)

    return record("conv3d", (x, p.weight, p.bias), out, backward)


def conv3d_backward(gy: np.ndarray, x: np.ndarray, p: ConvParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (x, weight, bias) of conv3d for upstream gy."""
    expected = (x.shape[0], p.c_out, *_conv_out(x.shape, p.kernel, p.stride, p.padding))
    if gy.shape != expected:
        raise ShapeError(f"conv3d upstream grad {gy.shape} != forward output {expected}")
    gx = conv_grad_input(gy, p.weight.value, x.shape, p.stride, p.padding)
    gw = conv_grad_weight(x, gy, p.weight.shape, p.stride, p.padding)
    return gx, gw, gy.sum(axis=CHANNELS)


def transposed_conv3d(x: Var, p: ConvParams) -> Var:
    """Exact adjoint of the strided conv3d; weights are (c_in, c_out, k...)."""
    _check_rank5(x.value, "transposed_conv3d")
    w = p.weight.value
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"transposed conv input has {x.shape[1]} channels, weights expect {w.shape[0]}")
    out = []
    for n, k, s, pad in zip(x.shape[2:], p.kernel, p.stride, p.padding):
        size = (n - 1) * s + k - 2 * pad
        if size < 1:
            raise ShapeError(f"transposed conv output extent {size} from input {n}, kernel {k}")
        out.append(size)
    y_shape = (x.shape[0], w.shape[1], *out)
    y = conv_grad_input(x.value, w, y_shape, p.stride, p.padding) + _bias(p.bias.value)
    result = Var(y)

    def backward(gy):
        gx = conv_forward(gy, w, p.stride, p.padding)
        gw = conv_grad_weight(gy, x.value, w.shape, p.stride, p.padding)
        return gx, gw, gy.sum(axis=CHANNELS)

    return record("transposed_conv3d", (x, p.weight, p.bias), result, backward)


def batchnorm(x: Var, p: BatchNormParams) -> Var:
    _check_rank5(x.value, "batchnorm")
    c = x.shape[1]
    if c != p.channels:
        raise ShapeError(f"batchnorm over {c} channels, parameters have {p.channels}")
    gamma = _bias(p.gamma.value)
    beta = _bias(p.beta.value)
    if p.mode == "train":
        n = x.value.size // c
        if n < 2:
            raise ShapeError(f"batchnorm in train mode needs >= 2 values per channel, got {n}")
        mean = x.value.mean(axis=CHANNELS)
        var = x.value.var(axis=CHANNELS)
        m = p.momentum
        p.running_mean *= 1 - m
        p.running_mean += m * mean.astype(p.running_mean.dtype)
        p.running_var *= 1 - m
        p.running_var += m * var.astype(p.running_var.dtype)
    else:
        mean = p.running_mean.astype(x.dtype)
        var = p.running_var.astype(x.dtype)
        n = 0
    inv = 1.0 / np.sqrt(_bias(var) + p.eps)
    xhat = (x.value - _bias(mean)) * inv
    out = Var((gamma * xhat + beta).astype(x.dtype, copy=False))
    train = p.mode == "train"

    def backward(gy):
        g_gamma = (gy * xhat).sum(axis=CHANNELS)
        g_beta = gy.sum(axis=CHANNELS)
        gxhat = gy * gamma
        if not train:
            return gxhat * inv, g_gamma, g_beta
        s1 = gxhat.sum(axis=CHANNELS, keepdims=True)
        s2 = (gxhat * xhat).sum(axis=CHANNELS, keepdims=True)
        gx = inv / n * (n * gxhat - s1 - xhat * s2)
        return gx, g_gamma, g_beta

    return record("batchnorm", (x, p.gamma, p.beta), out, backward)


def activation(x: Var, kind: str) -> Var:
    if kind == "relu":
        y = np.maximum(x.value, 0)
        out = Var(y)
        return record("relu", (x,), out, lambda gy: (gy * (x.value > 0),))
    if kind == "sigmoid":
        y = expit(x.value)
        out = Var(y)
        return record("sigmoid", (x,), out, lambda gy: (gy * y * (1 - y),))
    raise ShapeError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")


def maxpool3d(x: Var, kernel: Triple = (1, 2, 2), stride: Triple | None = None) -> Var:
    """Non-overlapping max pool. Ties send the gradient to the first element in row-major scan."""
    _check_rank5(x.value, "maxpool3d")
    stride = kernel if stride is None else stride
    if tuple(stride) != tuple(kernel):
        raise ShapeError(f"maxpool3d supports stride == kernel only, got {stride} vs {kernel}")
    b, c, t, h, w = x.shape
    kt, kh, kw = kernel
    if t % kt or h % kh or w % kw:
        raise ShapeError(f"maxpool3d kernel {kernel} does not tile extents {(t, h, w)}")
    t2, h2, w2 = t // kt, h // kh, w // kw
    blocks = (
        x.value.reshape(b, c, t2, kt, h2, kh, w2, kw)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(b, c, t2, h2, w2, kt * kh * kw)
    )
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    out = Var(y)

    def backward(gy):
        g = np.zeros(blocks.shape, dtype=gy.dtype)
        np.put_along_axis(g, arg[..., None], gy[..., None], axis=-1)
        g = g.reshape(b, c, t2, h2, w2, kt, kh, kw).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        return (g.reshape(x.shape),)

    return record("maxpool3d", (x,), out, backward)


def global_avg_pool3d(x: Var) -> Var:
    """Per-channel mean over (t, h, w), kept as (b, c, 1, 1, 1) for broadcasting."""
    _check_rank5(x.value, "global_avg_pool3d")
    n = int(np.prod(x.shape[2:]))
    out = Var(x.value.mean(axis=(2, 3, 4), keepdims=True))

    def backward(gy):
        return (np.broadcast_to(gy / n, x.shape).copy(),)

    return record("global_avg_pool3d", (x,), out, backward)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Var, b: Var) -> Var:
    out = Var(a.value + b.value)
    return record("add", (a, b), out, lambda gy: (_unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)))


def mul(a: Var, b: Var) -> Var:
    out = Var(a.value * b.value)

    def backward(gy):
        return _unbroadcast(gy * b.value, a.shape), _unbroadcast(gy * a.value, b.shape)

    return record("mul", (a, b), out, backward)


def concat(a: Var, b: Var) -> Var:
    """Channel concatenation of batched tensors, a's channels first."""
    if a.value.ndim != b.value.ndim or a.shape[:1] + a.shape[2:] != b.shape[:1] + b.shape[2:]:
        raise ShapeError(f"concat non-channel extents differ: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = Var(np.concatenate([a.value, b.value], axis=1))
    return record("concat", (a, b), out, lambda gy: (gy[:, :ca], gy[:, ca:]))


def reshape(x: Var, shape) -> Var:
    out = Var(x.value.reshape(shape))
    return record("reshape", (x,), out, lambda gy: (gy.reshape(x.shape),))


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Softmax over the channel axis of (K, h, w) or (b, K, h, w)."""
    if logits.shape[-3] < 2:
        raise ShapeError(f"softmax needs at least 2 classes, got {logits.shape[-3]}")
    z = logits - logits.max(axis=-3, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-3, keepdims=True)


def cross_entropy_with_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean pixel cross-entropy over non-ignored pixels and its logit gradient (p - q) / N."""
    if logits.ndim == 3:
        loss, grad = cross_entropy_with_grad(logits[None], labels[None])
        return loss, grad[0]
    b, k, h, w = logits.shape
    if labels.shape != (b, h, w):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    lab = labels.astype(np.int64)
    valid = lab != IGNORE_INDEX
    if (lab[valid] >= k).any():
        raise DataError(f"label {int(lab[valid].max())} >= num_classes {k}")
    n = int(valid.sum())
    if n == 0:
        raise DataError("every pixel is ignore_index; cross-entropy is undefined")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    safe = np.where(valid, lab, 0)
    picked = np.take_along_axis(z, safe[:, None], axis=1)[:, 0]
    loss = float(((logsum - picked) * valid).sum() / n)
    p = softmax_channels(logits)
    q = np.zeros_like(p)
    np.put_along_axis(q, safe[:, None], 1.0, axis=1)
    grad = (p - q) * valid[:, None] / n
    return loss, grad.astype(logits.dtype, copy=False)


def cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    loss, grad = cross_entropy_with_grad(logits.value, labels)
    out = Var(np.asarray(loss, dtype=logits.dtype))
    return record("cross_entropy", (logits,), out, lambda gy: (grad * gy,))
