"""Forward correctness, adjointness, and gradient checks for the primitives."""

import numpy as np
import pytest

from hfw import ops
from hfw.autodiff import Tape, backward
from oracles import (avg_pool_oracle, conv2d_oracle, depthwise_stride2_oracle,
                     fd_gradient, max_rel_err, pad_oracle)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


class TestConvForward:
    def test_identity_1x1(self, rng):
        x = rng.standard_normal((2, 3, 5, 7))
        w = np.eye(3).reshape(3, 3, 1, 1)
        y = ops.conv2d(x, ops.ConvParams(weights=w))
        np.testing.assert_allclose(y, x, rtol=0, atol=1e-15)

    def test_all_ones_3x3_on_constant(self):
        x = np.full((1, 1, 6, 6), 0.5)
        w = np.ones((1, 1, 3, 3))
        y = ops.conv2d(x, ops.ConvParams(weights=w))
        np.testing.assert_allclose(y, 9 * 0.5, atol=1e-14)
        yz = ops.conv2d(x, ops.ConvParams(weights=w, padding=1))
        assert abs(yz[0, 0, 3, 3] - 4.5) < 1e-14
        assert abs(yz[0, 0, 0, 0] - 2.0) < 1e-14  # corner sees a 2x2 patch

    @pytest.mark.parametrize("k,stride,padding,pad_mode,bias,hw", [
        (1, 1, 0, "zero", False, (7, 6)),
        (2, 2, 0, "zero", True, (8, 6)),
        (3, 1, 0, "zero", True, (7, 6)),
        (3, 1, 1, "zero", False, (7, 6)),
        (3, 1, 1, "reflect", True, (7, 6)),
        (2, 2, 1, "zero", False, (8, 6)),
        (3, 2, 1, "reflect", True, (7, 5)),
    ])
    def test_matches_loop_oracle(self, rng, k, stride, padding, pad_mode, bias, hw):
        x = rng.standard_normal((2, 3) + hw)
        w = rng.standard_normal((4, 3, k, k))
        b = rng.standard_normal(4) if bias else None
        got = ops.conv2d(x, ops.ConvParams(weights=w, bias=b, stride=stride,
                                           padding=padding, pad_mode=pad_mode))
        want = conv2d_oracle(x, w, b, stride, padding, pad_mode)
        assert max_rel_err(got, want) < 1e-12

    def test_reflect_padding_values(self, rng):
        x = rng.standard_normal((1, 2, 4, 5))
        xp = ops._pad2d(x, 1, "reflect")
        np.testing.assert_array_equal(xp, pad_oracle(x, 1, "reflect"))

    def test_errors(self, rng):
        x = rng.standard_normal((1, 3, 4, 4))
        with pytest.raises(ValueError, match="channels"):
            ops.conv2d(x, ops.ConvParams(weights=np.zeros((2, 4, 3, 3))))
        with pytest.raises(ValueError, match="kernel size"):
            ops.ConvParams(weights=np.zeros((2, 3, 4, 4)))
        with pytest.raises(ValueError, match="stride"):
            ops.ConvParams(weights=np.zeros((2, 3, 3, 3)), stride=3)
        with pytest.raises(ValueError, match="bias"):
            ops.ConvParams(weights=np.zeros((2, 3, 3, 3)), bias=np.zeros(3))
        with pytest.raises(ValueError, match="smaller than kernel"):
            ops.conv2d(np.zeros((1, 1, 2, 2)), ops.ConvParams(weights=np.zeros((1, 1, 3, 3))))
        with pytest.raises(ValueError, match="not integral"):
            ops.conv2d(np.zeros((1, 1, 5, 5)), ops.ConvParams(weights=np.zeros((1, 1, 2, 2)),
                                                              stride=2))
        with pytest.raises(ValueError, match="4-D"):
            ops.conv2d(np.zeros((3, 4, 4)), ops.ConvParams(weights=np.zeros((1, 3, 3, 3))))


class TestDepthwise:
    def test_matches_patch_oracle(self, rng):
        x = rng.standard_normal((2, 3, 6, 8))
        k2 = rng.standard_normal((2, 2))
        got = ops.depthwise_conv_stride2(x, k2)
        np.testing.assert_allclose(got, depthwise_stride2_oracle(x, k2), atol=1e-14)

    def test_deconv_is_exact_transpose(self, rng):
        k2 = rng.standard_normal((2, 2))
        x = rng.standard_normal((1, 2, 4, 6))
        y = rng.standard_normal((1, 2, 2, 3))
        lx = ops.depthwise_conv_stride2(x, k2)
        lty = ops.depthwise_deconv_stride2(y, k2)
        assert abs((lx * y).sum() - (x * lty).sum()) < 1e-12

    def test_deconv_places_scaled_copies(self):
        k2 = np.array([[1.0, 2.0], [3.0, 4.0]])
        x = np.ones((1, 1, 1, 1))
        y = ops.depthwise_deconv_stride2(x, k2)
        np.testing.assert_array_equal(y[0, 0], k2)

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError, match="even spatial dims"):
            ops.depthwise_conv_stride2(np.zeros((1, 1, 5, 4)), np.ones((2, 2)))


class TestPoolingAndResampling:
    def test_avg_pool_matches_oracle(self, rng):
        x = rng.standard_normal((2, 3, 6, 10))
        np.testing.assert_allclose(ops.avg_pool_2x2(x), avg_pool_oracle(x), atol=1e-14)

    def test_upsample_then_pool_is_identity(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        y = ops.avg_pool_2x2(ops.upsample_nearest_2x(x))
        np.testing.assert_allclose(y, x, atol=1e-14)

    def test_upsample_repeats(self):
        x = np.arange(4.0).reshape(1, 1, 2, 2)
        y = ops.upsample_nearest_2x(x)
        want = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]], dtype=float)
        np.testing.assert_array_equal(y[0, 0], want)

    def test_max_pool_values_and_indices(self):
        x = np.array([[1.0, 2.0, 5.0, 5.0],
                      [3.0, 0.0, 3.0, 1.0],
                      [7.0, 7.0, 0.0, 0.0],
                      [7.0, 7.0, 0.0, 9.0]]).reshape(1, 1, 4, 4)
        vals, idx = ops.max_pool_2x2(x)
        np.testing.assert_array_equal(vals[0, 0], [[3.0, 5.0], [7.0, 9.0]])
        # ties resolve to the first position in row-major block order
        np.testing.assert_array_equal(idx[0, 0], [[2, 0], [0, 3]])

    def test_unpool_scatters_to_recorded_positions(self, rng):
        x = rng.standard_normal((1, 2, 4, 6))
        vals, idx = ops.max_pool_2x2(x)
        up = ops.max_unpool_2x2(vals, idx)
        assert up.shape == x.shape
        nz = np.count_nonzero(up)
        assert nz == vals.size
        np.testing.assert_allclose(ops.max_pool_2x2(up)[0], vals, atol=0)

    def test_unpool_shape_mismatch(self, rng):
        x = rng.standard_normal((1, 1, 2, 2))
        with pytest.raises(ValueError, match="index map shape"):
            ops.max_unpool_2x2(x, np.zeros((1, 1, 3, 2), dtype=np.int64))
        with pytest.raises(ValueError, match="lie in"):
            ops.max_unpool_2x2(x, np.full((1, 1, 2, 2), 7))

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError, match="even spatial dims"):
            ops.avg_pool_2x2(np.zeros((1, 1, 3, 4)))
        with pytest.raises(ValueError, match="even spatial dims"):
            ops.max_pool_2x2(np.zeros((1, 1, 4, 7)))


class TestElementwise:
    def test_add_sub_scale(self, rng):
        a = rng.standard_normal((1, 2, 3, 3))
        b = rng.standard_normal((1, 2, 3, 3))
        np.testing.assert_array_equal(ops.add(a, b), a + b)
        np.testing.assert_array_equal(ops.sub(a, b), a - b)
        np.testing.assert_array_equal(ops.scale(a, -2.5), -2.5 * a)
        with pytest.raises(ValueError, match="differ in shape"):
            ops.add(a, b[:, :1])

    def test_concat_and_crop(self, rng):
        a = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal((2, 5, 3, 3))
        cat = ops.concat_channels([a, b])
        assert cat.shape == (2, 7, 3, 3)
        np.testing.assert_array_equal(cat[:, :2], a)
        np.testing.assert_array_equal(cat[:, 2:], b)
        np.testing.assert_array_equal(ops.crop2d(cat, 2, 3), cat[:, :, :2, :])
        with pytest.raises(ValueError, match="agree outside"):
            ops.concat_channels([a, b[:, :, :2]])
        with pytest.raises(ValueError, match="crop"):
            ops.crop2d(a, 4, 3)

    def test_pad_edge(self):
        x = np.arange(6.0).reshape(1, 1, 2, 3)
        y = ops.pad_edge2d(x, 1, 1)
        assert y.shape == (1, 1, 3, 4)
        np.testing.assert_array_equal(y[0, 0, 2], [3, 4, 5, 5])
        np.testing.assert_array_equal(y[0, 0, :, 3], [2, 5, 5])

    def test_mean_sq(self, rng):
        x = rng.standard_normal((2, 1, 3, 3))
        got = ops.mean_sq(x)
        assert got.shape == ()
        np.testing.assert_allclose(got, (x ** 2).mean(), atol=1e-15)


LINEAR_OPS = {
    "conv2d_k3p1_reflect": (
        lambda x: ops.conv2d(x, ops.ConvParams(
            weights=np.random.default_rng(7).standard_normal((4, 3, 3, 3)),
            padding=1, pad_mode="reflect")),
        (2, 3, 6, 6)),
    "conv2d_k2s2": (
        lambda x: ops.conv2d(x, ops.ConvParams(
            weights=np.random.default_rng(8).standard_normal((2, 3, 2, 2)), stride=2)),
        (2, 3, 6, 6)),
    "depthwise_conv": (
        lambda x: ops.depthwise_conv_stride2(
            x, np.random.default_rng(9).standard_normal((2, 2))),
        (2, 3, 6, 6)),
    "depthwise_deconv": (
        lambda x: ops.depthwise_deconv_stride2(
            x, np.random.default_rng(10).standard_normal((2, 2))),
        (2, 3, 3, 3)),
    "avg_pool": (ops.avg_pool_2x2, (2, 3, 6, 6)),
    "upsample": (ops.upsample_nearest_2x, (2, 3, 3, 3)),
    "crop": (lambda x: ops.crop2d(x, 4, 3), (2, 3, 6, 6)),
    "pad_edge": (lambda x: ops.pad_edge2d(x, 1, 1), (2, 3, 5, 5)),
    "scale": (lambda x: ops.scale(x, 3.25), (2, 3, 4, 4)),
    "unpool_fixed_idx": (
        lambda x: ops.max_unpool_2x2(
            x, np.random.default_rng(11).integers(0, 4, (2, 3, 3, 3))),
        (2, 3, 3, 3)),
}


class TestAdjointness:
    @pytest.mark.parametrize("name", sorted(LINEAR_OPS))
    def test_forward_backward_transpose_pair(self, rng, name):
        op, shape = LINEAR_OPS[name]
        x = rng.standard_normal(shape)
        tape = Tape()
        xv = tape.leaf(x, trainable=True)
        out = op(xv)
        y = rng.standard_normal(out.shape)
        entry = tape.entries[-1]
        lty = entry.bwd(y, entry.slot_vals, entry.out_val, entry.needs)[0]
        lhs = float((out.data * y).sum())
        rhs = float((x * lty).sum())
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def gradcheck(build, x0, tol=1e-5, eps=1e-6):
    """Compare tape gradients with central differences.

    build(x) must return a scalar; on Vars it is taped, on arrays it is the
    plain-number reference the differences are taken over.
    """
    tape = Tape()
    xv = tape.leaf(x0, trainable=True)
    loss = build(xv)
    got = backward(tape, loss)[xv.id]
    want = fd_gradient(lambda x: float(build(x)), x0, eps=eps)
    assert max_rel_err(got, want) < tol


class TestGradientsAgainstFiniteDifferences:
    def test_conv2d_wrt_input(self, rng):
        w = rng.standard_normal((4, 3, 3, 3))
        t = rng.standard_normal((2, 4, 5, 5))
        p = lambda wv: ops.ConvParams(weights=wv, padding=1, pad_mode="reflect")
        gradcheck(lambda x: ops.mean_sq(ops.sub(ops.conv2d(x, p(w)), t)),
                  rng.standard_normal((2, 3, 5, 5)))

    def test_conv2d_wrt_weights_and_bias(self, rng):
        x = rng.standard_normal((2, 3, 6, 6))
        t = rng.standard_normal((2, 2, 3, 3))
        b0 = rng.standard_normal(2)
        w0 = rng.standard_normal((2, 3, 2, 2))

        gradcheck(lambda w: ops.mean_sq(ops.sub(ops.conv2d(
            x, ops.ConvParams(weights=w, bias=b0, stride=2)), t)), w0)

        def with_bias(b):
            return ops.mean_sq(ops.sub(ops.conv2d(
                x, ops.ConvParams(weights=w0, bias=b, stride=2)), t))

        tape = Tape()
        bv = tape.leaf(b0, trainable=True)
        got = backward(tape, with_bias(bv))[bv.id]
        want = fd_gradient(lambda b: float(with_bias(b)), b0)
        assert max_rel_err(got, want) < 1e-5

    def test_conv2d_wrt_input_zero_pad_stride2(self, rng):
        w = rng.standard_normal((2, 2, 3, 3))
        t = rng.standard_normal((1, 2, 3, 3))
        gradcheck(lambda x: ops.mean_sq(ops.sub(ops.conv2d(
            x, ops.ConvParams(weights=w, stride=2, padding=1)), t)),
            rng.standard_normal((1, 2, 5, 5)))

    @pytest.mark.parametrize("name", sorted(LINEAR_OPS))
    def test_linear_ops(self, rng, name):
        op, shape = LINEAR_OPS[name]
        t = np.asarray(op(np.zeros(shape)))
        tgt = np.random.default_rng(20).standard_normal(t.shape)
        gradcheck(lambda x: ops.mean_sq(ops.sub(op(x), tgt)),
                  rng.standard_normal(shape))

    def test_relu(self, rng):
        x0 = rng.standard_normal((2, 3, 4, 4))
        x0 = x0 + np.sign(x0) * 0.05  # keep activations away from the kink
        t = rng.standard_normal(x0.shape)
        gradcheck(lambda x: ops.mean_sq(ops.sub(ops.relu(x), t)), x0)

    def test_max_pool(self, rng):
        flat = rng.permutation(np.arange(2 * 3 * 4 * 4, dtype=np.float64)) * 0.1
        x0 = flat.reshape(2, 3, 4, 4)  # distinct entries with gaps >> eps
        t = rng.standard_normal((2, 3, 2, 2))
        gradcheck(lambda x: ops.mean_sq(ops.sub(ops.max_pool_2x2(x)[0], t)), x0)

    def test_add_sub_chain(self, rng):
        a0 = rng.standard_normal((1, 2, 3, 3))
        b = rng.standard_normal((1, 2, 3, 3))
        gradcheck(lambda a: ops.mean_sq(ops.add(ops.sub(a, b), ops.scale(a, 0.5))), a0)

    def test_concat(self, rng):
        b = rng.standard_normal((1, 3, 3, 3))
        t = rng.standard_normal((1, 5, 3, 3))
        gradcheck(lambda a: ops.mean_sq(ops.sub(ops.concat_channels([a, b]), t)),
                  rng.standard_normal((1, 2, 3, 3)))

    def test_mean_sq(self, rng):
        gradcheck(lambda x: ops.mean_sq(x), rng.standard_normal((2, 2, 3, 3)))
