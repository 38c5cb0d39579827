import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesrcnn.tensor import (
    ConvParams,
    NonFiniteError,
    ShapeError,
    add,
    conv2d_backward,
    conv2d_forward,
    pixel_shuffle,
    pixel_unshuffle,
    relu_backward,
    relu_forward,
)
from oracles import (
    central_difference,
    conv2d_backward_direct,
    conv2d_direct,
    max_rel_error,
    pixel_shuffle_direct,
)


def _conv(c_out, c_in, k, rng, dtype=np.float32, integer=False):
    if integer:
        w = rng.integers(-3, 4, size=(c_out, c_in, k, k)).astype(dtype)
        b = rng.integers(-3, 4, size=c_out).astype(dtype)
    else:
        w = rng.standard_normal((c_out, c_in, k, k)).astype(dtype)
        b = rng.standard_normal(c_out).astype(dtype)
    return ConvParams(w, b)


class TestConvForward:
    def test_box_sum_with_zero_padding(self):
        x = np.ones((1, 1, 3, 3), np.float32)
        y = conv2d_forward(x, ConvParams(np.ones((1, 1, 3, 3), np.float32), np.zeros(1, np.float32)))
        assert y[0, 0, 1, 1] == 9
        assert y[0, 0, 0, 0] == y[0, 0, 0, 2] == y[0, 0, 2, 0] == y[0, 0, 2, 2] == 4
        assert y[0, 0, 0, 1] == 6

    def test_identity_1x1(self, rng):
        x = rng.standard_normal((2, 1, 4, 5)).astype(np.float32)
        y = conv2d_forward(x, ConvParams(np.ones((1, 1, 1, 1), np.float32), np.zeros(1, np.float32)))
        np.testing.assert_array_equal(y, x)

    def test_matches_direct_summation(self, rng):
        x = rng.integers(-5, 6, size=(2, 3, 5, 5)).astype(np.float32)
        p = _conv(4, 3, 3, rng, integer=True)
        np.testing.assert_array_equal(conv2d_forward(x, p), conv2d_direct(x, p.weight, p.bias))

    def test_float_inputs_close_to_direct(self, rng):
        x = rng.standard_normal((1, 5, 6, 4))
        p = _conv(3, 5, 3, rng, dtype=np.float64)
        np.testing.assert_allclose(conv2d_forward(x, p), conv2d_direct(x, p.weight, p.bias), rtol=1e-12, atol=1e-12)

    def test_same_padding_shape(self, rng):
        for k in (1, 3):
            y = conv2d_forward(np.zeros((2, 3, 7, 9), np.float32), _conv(5, 3, k, rng))
            assert y.shape == (2, 5, 7, 9)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            conv2d_forward(np.zeros((1, 2, 4, 4), np.float32), _conv(1, 3, 3, rng))

    def test_nonfinite_rejected(self, rng):
        x = np.zeros((1, 1, 3, 3), np.float32)
        x[0, 0, 1, 1] = np.nan
        with pytest.raises(NonFiniteError):
            conv2d_forward(x, _conv(1, 1, 3, rng))

    def test_bad_kernel_size(self):
        with pytest.raises(ShapeError):
            ConvParams(np.zeros((1, 1, 5, 5)), np.zeros(1))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_linearity(self, seed, alpha, beta):
        rng = np.random.default_rng(seed)
        p = _conv(3, 2, 3, rng)
        p.bias[:] = 0
        x1 = rng.standard_normal((1, 2, 5, 6)).astype(np.float32)
        x2 = rng.standard_normal((1, 2, 5, 6)).astype(np.float32)
        lhs = conv2d_forward((alpha * x1 + beta * x2).astype(np.float32), p)
        rhs = alpha * conv2d_forward(x1, p) + beta * conv2d_forward(x2, p)
        scale = np.abs(alpha * conv2d_forward(np.abs(x1), ConvParams(np.abs(p.weight), p.bias))).max() \
            + np.abs(beta * conv2d_forward(np.abs(x2), ConvParams(np.abs(p.weight), p.bias))).max() + 1e-12
        assert np.max(np.abs(lhs - rhs)) / scale < 1e-5


class TestConvBackward:
    def test_zero_cotangent(self, rng):
        x = rng.standard_normal((2, 3, 4, 4)).astype(np.float32)
        p = _conv(2, 3, 3, rng)
        gx, gw, gb = conv2d_backward(x, p, np.zeros((2, 2, 4, 4), np.float32))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_scalar_chain_rule(self):
        x = np.array([[[[2.5]]]])
        p = ConvParams(np.array([[[[-1.5]]]]), np.zeros(1))
        gx, gw, gb = conv2d_backward(x, p, np.array([[[[4.0]]]]))
        assert gw[0, 0, 0, 0] == 4.0 * 2.5
        assert gx[0, 0, 0, 0] == 4.0 * -1.5
        assert gb[0] == 4.0

    @pytest.mark.parametrize("k", [1, 3])
    def test_matches_direct_loops(self, rng, k):
        x = rng.integers(-4, 5, size=(2, 3, 5, 4)).astype(np.float32)
        p = _conv(4, 3, k, rng, integer=True)
        gy = rng.integers(-4, 5, size=(2, 4, 5, 4)).astype(np.float32)
        for got, want in zip(conv2d_backward(x, p, gy), conv2d_backward_direct(x, p.weight, gy)):
            np.testing.assert_array_equal(got, want)

    @pytest.mark.parametrize("k", [1, 3])
    def test_finite_differences(self, rng, k):
        x = rng.standard_normal((2, 2, 4, 3))
        p = _conv(3, 2, k, rng, dtype=np.float64)
        r = rng.standard_normal((2, 3, 4, 3))

        def loss():
            return float(np.sum(conv2d_forward(x, p) * r))

        gx, gw, gb = conv2d_backward(x, p, r)
        assert max_rel_error(gx, central_difference(loss, x, 1e-3)) < 1e-4
        assert max_rel_error(gw, central_difference(loss, p.weight, 1e-3)) < 1e-4
        assert max_rel_error(gb, central_difference(loss, p.bias, 1e-3)) < 1e-4

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            conv2d_backward(np.zeros((1, 3, 4, 4)), _conv(2, 3, 3, rng, np.float64), np.zeros((1, 2, 4, 5)))


class TestRelu:
    def test_definition(self):
        np.testing.assert_array_equal(relu_forward(np.array([-1.0, 0.0, 2.0])), [0, 0, 2])

    def test_negative_and_positive(self, rng):
        x = rng.random((2, 3, 4, 4)) + 0.1
        assert not relu_forward(-x).any()
        np.testing.assert_array_equal(relu_forward(x), x)

    def test_backward_masks(self, rng):
        x = rng.random((1, 2, 3, 3)) + 0.1
        g = rng.standard_normal(x.shape)
        np.testing.assert_array_equal(relu_backward(x, g), g)
        assert not relu_backward(-x, g).any()
        assert relu_backward(np.zeros(1), np.ones(1))[0] == 0

    def test_backward_finite_difference(self, rng):
        x = rng.standard_normal((1, 2, 4, 4))
        x[np.abs(x) < 0.05] = 0.5  # keep away from the kink
        r = rng.standard_normal(x.shape)
        fd = central_difference(lambda: float(np.sum(relu_forward(x) * r)), x, 1e-3)
        assert max_rel_error(relu_backward(x, r), fd) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            relu_backward(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


class TestAdd:
    def test_identities(self, rng):
        a = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        b = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        np.testing.assert_array_equal(add(a, np.zeros_like(a)), a)
        assert not add(a, -a).any()
        np.testing.assert_array_equal(add(a, b), add(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(np.zeros((1, 1, 2, 2)), np.zeros((1, 2, 2, 2)))


class TestPixelShuffle:
    def test_identity_r1(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        np.testing.assert_array_equal(pixel_shuffle(x, 1), x)

    def test_four_element_permutation(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        np.testing.assert_array_equal(pixel_shuffle(x, 2)[0, 0], [[1, 2], [3, 4]])

    @pytest.mark.parametrize("r", [2, 3])
    def test_matches_index_formula(self, rng, r):
        x = rng.standard_normal((2, 2 * r * r, 3, 4))
        np.testing.assert_array_equal(pixel_shuffle(x, r), pixel_shuffle_direct(x, r))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
    def test_bijection(self, r, c, h, w, seed):
        x = np.random.default_rng(seed).standard_normal((1, c * r * r, h, w))
        y = pixel_shuffle(x, r)
        assert y.shape == (1, c, h * r, w * r)
        np.testing.assert_array_equal(np.sort(y, axis=None), np.sort(x, axis=None))
        np.testing.assert_array_equal(pixel_unshuffle(y, r), x)

    def test_indivisible_channels(self):
        with pytest.raises(ShapeError):
            pixel_shuffle(np.zeros((1, 3, 2, 2)), 2)
