import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from oracles import dense_matrix, keys_cubic, naive_conv2d
from proxsplit.tensor import (ConfigError, DownsampleOperator, Kernel, ShapeError, bicubic_resample,
                              build_target_pyramid, conv2d, conv2d_adjoint, correlate2d, correlate2d_adjoint,
                              pad_reflect, pad_reflect_adjoint, resize)


class TestPadReflect:
    def test_row_margin_one(self):
        out = pad_reflect(np.array([[1.0, 2.0, 3.0]]), (0, 0, 1, 1))
        assert_array_equal(out, [[2, 1, 2, 3, 2]])

    def test_zero_margins_identity(self, rng):
        x = rng.random((2, 3, 5, 4))
        assert_array_equal(pad_reflect(x, (0, 0, 0, 0)), x)

    def test_single_sample(self):
        assert_array_equal(pad_reflect(np.array([[5.0]]), (0, 0, 0, 0)), [[5.0]])

    def test_margin_too_large(self):
        with pytest.raises(ValueError):
            pad_reflect(np.zeros((1, 1, 3, 3)), (3, 0, 0, 0))

    def test_adjoint_is_transpose(self):
        margins = (2, 1, 0, 2)
        shape = (1, 1, 4, 3)
        m = dense_matrix(lambda e: pad_reflect(e, margins), shape)
        padded = (1, 1, 4 + 3, 3 + 2)
        mt = dense_matrix(lambda e: pad_reflect_adjoint(e, margins), padded)
        assert_allclose(mt, m.T, atol=0)


class TestKernel:
    def test_even_extent_rejected(self):
        with pytest.raises(ShapeError):
            Kernel(np.ones((2, 3)))

    def test_delta(self):
        k = Kernel.delta(3)
        assert k.is_delta()
        assert k.origin == (1, 1)
        assert not Kernel(np.full((3, 3), 1 / 9)).is_delta()


class TestConv2d:
    def test_delta_identity(self, rng):
        x = rng.standard_normal((2, 3, 7, 6))
        assert_array_equal(conv2d(x, Kernel.delta()), x)
        assert_array_equal(conv2d(x, Kernel.delta(3)), x)

    def test_constant_image(self, rng):
        taps = rng.random((5, 3))
        out = conv2d(np.full((1, 1, 6, 6), 0.7), Kernel(taps))
        assert_allclose(out, 0.7 * taps.sum(), rtol=1e-12)

    def test_centred_impulse_box(self):
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 1, 1] = 1.0
        taps = np.full((1, 1, 3, 3), 1 / 9)
        out = conv2d(x, Kernel(taps))
        assert_allclose(out[0, 0, 1, 1], 1 / 9)
        assert_allclose(out, naive_conv2d(x, taps), atol=1e-15)

    def test_matches_nested_loop_oracle(self, rng):
        x = rng.standard_normal((2, 2, 6, 7))
        taps = rng.standard_normal((3, 2, 3, 5))
        assert_allclose(conv2d(x, Kernel(taps)), naive_conv2d(x, taps), atol=1e-12)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            conv2d(rng.random((1, 2, 5, 5)), Kernel(rng.random((1, 3, 3, 3))))

    def test_depthwise_single_channel_kernel(self, rng):
        x = rng.standard_normal((1, 3, 5, 5))
        taps = rng.standard_normal((3, 3))
        out = conv2d(x, Kernel(taps))
        for c in range(3):
            assert_allclose(out[:, c:c + 1], naive_conv2d(x[:, c:c + 1], taps[None, None]), atol=1e-12)


class TestConvAdjoint:
    def test_delta_identity(self, rng):
        g = rng.standard_normal((1, 1, 5, 5))
        assert_array_equal(conv2d_adjoint(g, Kernel.delta()), g)

    def test_inner_product_against_naive_oracle(self, rng):
        for _ in range(10):
            taps = rng.standard_normal((2, 3, 3, 3))
            x = rng.standard_normal((1, 3, 8, 8))
            g = rng.standard_normal((1, 2, 8, 8))
            kx = naive_conv2d(x, taps)
            lhs = np.vdot(kx, g)
            rhs = np.vdot(x, conv2d_adjoint(g, Kernel(taps)))
            assert abs(lhs - rhs) / (np.linalg.norm(kx) * np.linalg.norm(g)) <= 1e-6

    def test_dense_transpose(self, rng):
        taps = rng.standard_normal((1, 1, 5, 3))
        shape = (1, 1, 5, 4)
        m = dense_matrix(lambda e: conv2d(e, Kernel(taps)), shape)
        mt = dense_matrix(lambda e: conv2d_adjoint(e, Kernel(taps)), shape)
        assert_allclose(mt, m.T, atol=1e-13)

    def test_off_centre_tap_shifts_opposite(self, rng):
        taps = np.zeros((3, 3))
        taps[0, 0] = 1.0
        x = rng.standard_normal((1, 1, 6, 6))
        fwd = conv2d(x, Kernel(taps))
        back = conv2d_adjoint(x, Kernel(taps))
        # forward pulls from (+1, +1), adjoint from (-1, -1); row/col 4 also collects the reflected edge
        assert_allclose(fwd[0, 0, :-1, :-1], x[0, 0, 1:, 1:])
        assert_allclose(back[0, 0, 1:4, 1:4], x[0, 0, 0:3, 0:3])

    def test_correlate_adjoint_multichannel(self, rng):
        w = rng.standard_normal((4, 2, 3, 3))
        x = rng.standard_normal((2, 2, 5, 6))
        g = rng.standard_normal((2, 4, 5, 6))
        assert_allclose(np.vdot(correlate2d(x, w), g), np.vdot(x, correlate2d_adjoint(g, w)), rtol=1e-12)


class TestBicubic:
    @pytest.mark.parametrize("factor,direction", [(2, "down"), (3, "down"), (4, "down"), (2, "up"), (3, "up")])
    def test_constant_preserved(self, factor, direction):
        x = np.full((1, 1, 12, 12), 0.3)
        out = bicubic_resample(x, factor, direction)
        size = 12 // factor if direction == "down" else 12 * factor
        assert out.shape == (1, 1, size, size)
        assert_allclose(out, 0.3, rtol=1e-12)

    def test_down2_linear_ramp(self):
        n = 32
        ramp = np.tile(np.arange(n, dtype=float), (n, 1))[None, None]
        out = bicubic_resample(ramp, 2, "down")[0, 0]
        # output sample j sits at input coordinate 2j + 0.5; interior avoids boundary folding
        j = np.arange(2, n // 2 - 2)
        assert_allclose(out[:, j], np.broadcast_to(2 * j + 0.5, (n // 2, j.size)), atol=1e-6)

    def test_up2_single_pixel_footprint(self):
        x = np.zeros((1, 1, 9, 9))
        x[0, 0, 4, 4] = 1.0
        out = bicubic_resample(x, 2, "up")[0, 0]
        # output row r sits at input coordinate (r + 0.5) / 2 - 0.5; rows 5..12 lie within 2 of pixel 4
        dist = [1.75, 1.25, 0.75, 0.25, 0.25, 0.75, 1.25, 1.75]
        taps = np.array([keys_cubic(d) for d in dist])
        assert_allclose(taps[:4], [-0.0234375, -0.0703125, 0.2265625, 0.8671875])
        assert_allclose(out[5:13, 5:13], np.outer(taps, taps), atol=1e-14)
        assert np.count_nonzero(np.abs(out) > 1e-15) == 64

    def test_unsupported_factor(self):
        with pytest.raises(ConfigError):
            bicubic_resample(np.zeros((1, 1, 8, 8)), 1.5, "up")
        with pytest.raises(ConfigError):
            bicubic_resample(np.zeros((1, 1, 8, 8)), 5, "down")

    def test_downsample_operator_adjoint(self, rng):
        d = DownsampleOperator(2)
        x = rng.standard_normal((2, 1, 10, 12))
        g = rng.standard_normal((2, 1, 5, 6))
        assert_allclose(np.vdot(d.apply(x), g), np.vdot(x, d.adjoint(g)), rtol=1e-12)


class TestPyramid:
    def test_single_level(self, rng):
        x = rng.random((1, 1, 8, 8))
        pyr = build_target_pyramid(x, 1)
        assert len(pyr) == 1
        assert_array_equal(pyr[0], x)

    def test_sizes(self, rng):
        pyr = build_target_pyramid(rng.random((1, 1, 64, 64)), 3)
        assert [p.shape[-1] for p in pyr] == [64, 32, 16]

    def test_constant(self):
        for p in build_target_pyramid(np.full((1, 1, 16, 16), 0.4), 3):
            assert_allclose(p, 0.4, rtol=1e-12)

    def test_levels_match_resize(self, rng):
        x = rng.random((1, 1, 16, 16))
        assert_allclose(build_target_pyramid(x, 2)[1], resize(x, 8, 8))

    def test_not_divisible(self):
        with pytest.raises(ValueError):
            build_target_pyramid(np.zeros((1, 1, 10, 10)), 3)
