"""Forward values and tape behaviour of the differentiable primitives."""
import math

import numpy as np
import pytest

from msfcn.core.tensor import IGNORE_INDEX
from msfcn.errors import DataError, ShapeError
from msfcn.nn import ops
from msfcn.nn.ops import (
    activation,
    add,
    batchnorm,
    concat,
    conv3d,
    conv_forward,
    conv_grad_input,
    conv_grad_weight,
    cross_entropy,
    cross_entropy_with_grad,
    global_avg_pool3d,
    maxpool3d,
    out_extent,
    softmax_channels,
    transposed_conv3d,
)
from msfcn.nn.params import BN_EPS, ConvParams, init_bn, init_conv
from msfcn.nn.tape import GradTape, Var


def _conv(weight, *, stride=(1, 1, 1), padding=(0, 0, 0), transposed=False):
    w = np.asarray(weight, dtype=np.float32)
    c_out = w.shape[1] if transposed else w.shape[0]
    return ConvParams(
        weight=Var(w, requires_grad=True),
        bias=Var(np.zeros(c_out, np.float32), requires_grad=True),
        stride=stride,
        padding=padding,
        transposed=transposed,
    )


def _direct_conv(x, w, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), *((p, p) for p in padding)))
    kernel = w.shape[2:]
    out = tuple((n - k) // s + 1 for n, k, s in zip(xp.shape[2:], kernel, stride))
    y = np.zeros((x.shape[0], w.shape[0], *out))
    for idx in np.ndindex(*out):
        lo = [i * s for i, s in zip(idx, stride)]
        patch = xp[:, :, lo[0] : lo[0] + kernel[0], lo[1] : lo[1] + kernel[1], lo[2] : lo[2] + kernel[2]]
        y[(slice(None), slice(None), *idx)] = np.tensordot(patch, w, axes=((1, 2, 3, 4), (1, 2, 3, 4)))
    return y


# =============================================================================
# Convolution
# =============================================================================


class TestConv:
    def test_out_extent(self):
        assert out_extent(256, 3, 1, 1) == 256
        assert out_extent(5, 3, 2, 1) == 3
        with pytest.raises(ShapeError):
            out_extent(1, 3, 1, 0)

    def test_pointwise_identity(self, rng):
        x = rng.standard_normal((2, 1, 2, 4, 4)).astype(np.float32)
        y = conv3d(Var(x), _conv(np.ones((1, 1, 1, 1, 1))))
        np.testing.assert_array_equal(y.value, x)

    def test_all_ones_same_padding(self):
        x = np.ones((1, 1, 3, 3, 3), np.float32)
        y = conv3d(Var(x), _conv(np.ones((1, 1, 3, 3, 3)), padding=(1, 1, 1))).value
        assert y.shape == (1, 1, 3, 3, 3)
        assert y[0, 0, 1, 1, 1] == 27
        assert y[0, 0, 0, 0, 0] == 8
        assert y[0, 0, 0, 1, 1] == 18

    def test_bias_is_added(self):
        p = _conv(np.zeros((2, 1, 1, 1, 1)))
        p.bias.value[:] = [1.0, -2.0]
        y = conv3d(Var(np.zeros((1, 1, 1, 2, 2), np.float32)), p).value
        assert (y[0, 0] == 1).all() and (y[0, 1] == -2).all()

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv3d(Var(np.zeros((1, 2, 1, 2, 2), np.float32)), _conv(np.ones((1, 1, 1, 1, 1))))

    def test_strided_extent(self, rng):
        p = init_conv(rng, 2, 3, (1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))
        y = conv3d(Var(np.zeros((1, 2, 1, 5, 5), np.float32)), p)
        assert y.shape == (1, 3, 1, 3, 3)

    def test_transposed_two_by_two(self):
        p = _conv(np.ones((1, 1, 1, 2, 2)), stride=(1, 2, 2), transposed=True)
        y = transposed_conv3d(Var(np.full((1, 1, 1, 1, 1), 2.5, np.float32)), p).value
        assert y.shape == (1, 1, 1, 2, 2)
        assert (y == 2.5).all()

    def test_transposed_doubles_extent(self, rng):
        p = init_conv(rng, 4, 2, (1, 2, 2), stride=(1, 2, 2), padding=(0, 0, 0), transposed=True)
        y = transposed_conv3d(Var(np.zeros((1, 4, 3, 5, 6), np.float32)), p)
        assert y.shape == (1, 2, 3, 10, 12)

    def test_transposed_is_adjoint(self, rng):
        # <conv(x), y> == <x, conv^T(y)> for matching weights, no bias
        w = rng.standard_normal((2, 3, 1, 3, 3))
        fwd = _conv(w, stride=(1, 2, 2), padding=(0, 1, 1))
        adj = _conv(w, stride=(1, 2, 2), padding=(0, 1, 1), transposed=True)
        fwd.weight.value = w
        adj.weight.value = w
        x = rng.standard_normal((1, 3, 1, 5, 5))
        y = rng.standard_normal((1, 2, 1, 3, 3))
        lhs = float((conv3d(Var(x), fwd).value * y).sum())
        rhs = float((x * transposed_conv3d(Var(y), adj).value).sum())
        assert lhs == pytest.approx(rhs, rel=1e-10)

    @pytest.mark.parametrize("block", [1 << 24, 1])
    @pytest.mark.parametrize(
        "kernel,stride,padding,extent",
        [
            ((3, 3, 3), (1, 1, 1), (1, 1, 1), (3, 5, 4)),
            ((1, 3, 3), (1, 2, 2), (0, 1, 1), (2, 6, 5)),
            ((3, 2, 2), (1, 2, 2), (0, 0, 0), (4, 7, 6)),
        ],
    )
    def test_matches_direct_sum(self, rng, monkeypatch, block, kernel, stride, padding, extent):
        monkeypatch.setattr(ops, "COLUMN_BLOCK", block)
        x = rng.standard_normal((2, 3, *extent))
        w = rng.standard_normal((4, 3, *kernel))
        expected = _direct_conv(x, w, stride, padding)
        np.testing.assert_allclose(conv_forward(x, w, stride, padding), expected, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [((1, 1, 1), (1, 1, 1)), ((1, 2, 2), (0, 0, 0)), ((2, 2, 2), (1, 1, 0))])
    def test_gradients_are_adjoint(self, rng, stride, padding):
        x = rng.standard_normal((2, 3, 5, 6, 5))
        w = rng.standard_normal((2, 3, 3, 3, 3))
        gy = rng.standard_normal(conv_forward(x, w, stride, padding).shape)
        lhs = float((conv_forward(x, w, stride, padding) * gy).sum())
        gx = conv_grad_input(gy, w, x.shape, stride, padding)
        gw = conv_grad_weight(x, gy, w.shape, stride, padding)
        assert gx.shape == x.shape and gw.shape == w.shape
        assert float((x * gx).sum()) == pytest.approx(lhs, rel=1e-10)
        assert float((w * gw).sum()) == pytest.approx(lhs, rel=1e-10)

    def test_is_linear(self, rng):
        p = _conv(rng.standard_normal((3, 2, 3, 3, 3)), padding=(1, 1, 1))
        x = rng.standard_normal((1, 2, 4, 6, 6)).astype(np.float32)
        z = rng.standard_normal((1, 2, 4, 6, 6)).astype(np.float32)
        a, b = np.float32(0.7), np.float32(-1.3)
        mixed = conv3d(Var(a * x + b * z), p).value
        separate = a * conv3d(Var(x), p).value + b * conv3d(Var(z), p).value
        np.testing.assert_allclose(mixed, separate, atol=1e-4)


# =============================================================================
# Normalization and activations
# =============================================================================


class TestBatchNorm:
    def test_train_normalizes(self):
        x = np.array([-1.0, 1.0, -1.0, 1.0], np.float32).reshape(2, 1, 1, 1, 2)
        p = init_bn(1)
        y = batchnorm(Var(x), p).value
        expected = 1.0 / math.sqrt(1.0 + BN_EPS)
        np.testing.assert_allclose(np.abs(y), expected, rtol=1e-6)
        np.testing.assert_allclose(np.sign(y), np.sign(x))

    def test_running_stats_update(self):
        x = np.array([1.0, 3.0], np.float32).reshape(1, 1, 1, 1, 2)
        p = init_bn(1)
        batchnorm(Var(x), p)
        assert p.running_mean[0] == pytest.approx(0.2)
        assert p.running_var[0] == pytest.approx(0.9 + 0.1 * 1.0)

    def test_eval_uses_running_stats(self):
        p = init_bn(1)
        p.mode = "eval"
        p.running_mean[:] = 2.0
        p.running_var[:] = 4.0
        y = batchnorm(Var(np.full((1, 1, 1, 1, 1), 4.0, np.float32)), p).value
        assert y.item() == pytest.approx(2.0 / math.sqrt(4.0 + BN_EPS))
        assert p.running_mean[0] == 2.0

    def test_train_needs_two_values(self):
        with pytest.raises(ShapeError):
            batchnorm(Var(np.zeros((1, 1, 1, 1, 1), np.float32)), init_bn(1))


class TestActivation:
    def test_relu(self):
        y = activation(Var(np.array([-1.0, 0.0, 2.0])), "relu").value
        np.testing.assert_array_equal(y, [0.0, 0.0, 2.0])

    def test_sigmoid(self):
        y = activation(Var(np.array([0.0, 100.0, -100.0])), "sigmoid").value
        np.testing.assert_allclose(y, [0.5, 1.0, 0.0], atol=1e-12)

    def test_unknown(self):
        with pytest.raises(ShapeError):
            activation(Var(np.zeros(1)), "tanh")


# =============================================================================
# Pooling
# =============================================================================


class TestPooling:
    def test_maxpool(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32).reshape(1, 1, 1, 2, 2)
        assert maxpool3d(Var(x)).value.item() == 4.0

    def test_maxpool_tie_goes_to_first(self):
        x = Var(np.ones((1, 1, 1, 2, 2)), requires_grad=True)
        with GradTape() as tape:
            y = maxpool3d(x)
        tape.backward(y, np.ones(y.shape))
        np.testing.assert_array_equal(x.grad.reshape(-1), [1, 0, 0, 0])

    def test_maxpool_must_tile(self):
        with pytest.raises(ShapeError):
            maxpool3d(Var(np.zeros((1, 1, 1, 3, 4))))

    def test_global_avg(self):
        x = np.arange(4, dtype=np.float32).reshape(1, 1, 1, 2, 2)
        y = global_avg_pool3d(Var(x)).value
        assert y.shape == (1, 1, 1, 1, 1)
        assert y.item() == 1.5


# =============================================================================
# Softmax and cross-entropy
# =============================================================================


class TestCrossEntropy:
    def test_softmax(self):
        logits = np.array([0.0, math.log(3.0)]).reshape(2, 1, 1)
        np.testing.assert_allclose(softmax_channels(logits).ravel(), [0.25, 0.75])

    def test_softmax_is_shift_invariant(self, rng):
        z = rng.standard_normal((3, 2, 2))
        np.testing.assert_allclose(softmax_channels(z), softmax_channels(z + 1000.0))

    def test_argmax_is_preserved(self, rng):
        logits = rng.standard_normal((2, 5, 6, 7))
        np.testing.assert_array_equal(softmax_channels(logits).argmax(axis=1), logits.argmax(axis=1))

    def test_gradient_sums_to_zero_over_classes(self, rng):
        logits = rng.standard_normal((2, 4, 5, 5))
        labels = rng.integers(0, 4, size=(2, 5, 5)).astype(np.uint16)
        labels[0, :2] = IGNORE_INDEX
        _, grad = cross_entropy_with_grad(logits, labels)
        valid = labels != IGNORE_INDEX
        np.testing.assert_allclose(grad.sum(axis=1)[valid], 0.0, atol=1e-15)
        assert (grad.transpose(0, 2, 3, 1)[~valid] == 0).all()
        assert (np.abs(grad.transpose(0, 2, 3, 1)[valid]) > 0).all()

    def test_uniform_logits(self):
        loss, _ = cross_entropy_with_grad(np.zeros((2, 1, 1)), np.zeros((1, 1), np.uint16))
        assert loss == pytest.approx(math.log(2.0))

    def test_ignored_pixels(self):
        logits = np.zeros((1, 2, 1, 2))
        logits[0, 1, 0, 1] = 5.0
        labels = np.array([[[0, IGNORE_INDEX]]], np.uint16)
        loss, grad = cross_entropy_with_grad(logits, labels)
        assert loss == pytest.approx(math.log(2.0))
        assert (grad[0, :, 0, 1] == 0).all()
        np.testing.assert_allclose(grad[0, :, 0, 0], [-0.5, 0.5])

    def test_all_ignored(self):
        with pytest.raises(DataError):
            cross_entropy_with_grad(np.zeros((2, 1, 1)), np.full((1, 1), IGNORE_INDEX, np.uint16))

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            cross_entropy_with_grad(np.zeros((2, 1, 1)), np.full((1, 1), 2, np.uint16))

    def test_needs_two_classes(self):
        with pytest.raises(ShapeError):
            softmax_channels(np.zeros((1, 2, 2)))


# =============================================================================
# Tape
# =============================================================================


class TestTape:
    def test_fan_out_accumulates(self):
        x = Var(np.array([1.0, 2.0]), requires_grad=True)
        with GradTape() as tape:
            y = add(x, x)
        tape.backward(y, np.ones(2))
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_no_tape_records_nothing(self):
        x = Var(np.ones((1, 1, 1, 1, 1)), requires_grad=True)
        y = global_avg_pool3d(x)
        assert x.grad is None and y.requires_grad is False

    def test_concat_splits_gradient(self):
        a = Var(np.zeros((1, 1, 1, 1, 1)), requires_grad=True)
        b = Var(np.zeros((1, 2, 1, 1, 1)), requires_grad=True)
        with GradTape() as tape:
            y = concat(a, b)
        tape.backward(y, np.arange(3.0).reshape(y.shape))
        assert a.grad.ravel().tolist() == [0.0]
        assert b.grad.ravel().tolist() == [1.0, 2.0]

    def test_non_scalar_needs_grad(self):
        x = Var(np.ones((1, 1, 1, 1, 2)), requires_grad=True)
        with GradTape() as tape:
            y = activation(x, "relu")
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_cross_entropy_backward(self):
        logits = Var(np.zeros((1, 2, 1, 1)), requires_grad=True)
        with GradTape() as tape:
            loss = cross_entropy(logits, np.zeros((1, 1, 1), np.uint16))
        tape.backward(loss)
        np.testing.assert_allclose(logits.grad.ravel(), [-0.5, 0.5])
