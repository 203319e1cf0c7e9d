import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from oracles import grid_argmin
from proxsplit.prox import (GradientStepProx, HqsConfig, IdentityProx, QuadraticProx, SoftThreshold,
                            data_fidelity_step, data_fidelity_step_vjp, gradient_step_prox_approx, hqs_solve,
                            quadratic_prox_exact, soft_threshold)
from proxsplit.tensor import Kernel, ShapeError, conv2d


class TestSoftThreshold:
    def test_zero_input(self):
        for lam, beta in [(0.5, 1.0), (3.0, 0.2)]:
            assert soft_threshold(0.0, lam, beta) == 0.0

    def test_grid_oracle_example(self):
        z = grid_argmin(lambda z: (z - 3) ** 2 + 2 * np.abs(z))
        assert_allclose(soft_threshold(3.0, 2.0, 1.0), 2.0)
        assert abs(z - 2.0) <= 1e-4

    def test_no_prior(self, rng):
        x = rng.standard_normal(20)
        assert_array_equal(soft_threshold(x, 0.0, 2.0), x)

    def test_random_against_grid(self, rng):
        for _ in range(20):
            x, lam, beta = rng.uniform(-3, 3), rng.uniform(0, 3), rng.uniform(0.3, 4)
            z = grid_argmin(lambda z: beta * (z - x) ** 2 + lam * np.abs(z))
            assert abs(soft_threshold(x, lam, beta) - z) <= 1e-4


class TestQuadraticProx:
    def test_alpha_zero(self, rng):
        x = rng.standard_normal(5)
        assert_array_equal(quadratic_prox_exact(x, 0.0, 3.0), x)

    def test_grid_oracle_example(self):
        assert_allclose(quadratic_prox_exact(1.0, 1.0, 1.0), 0.5)
        assert abs(grid_argmin(lambda z: (z - 1) ** 2 + z * z) - 0.5) <= 1e-4

    def test_large_beta(self, rng):
        x = rng.standard_normal(10)
        assert np.all(np.abs(quadratic_prox_exact(x, 1.0, 1e6) - x) <= 2e-6 * np.abs(x))


class TestGradientStep:
    def test_zero_gradient(self, rng):
        x = rng.standard_normal(4)
        assert_array_equal(gradient_step_prox_approx(x, np.zeros_like, 3.0), x)

    def test_two_over_beta_scalar(self):
        assert_allclose(gradient_step_prox_approx(1.0, lambda z: 2 * z, 8.0, "two_over_beta"), 0.5)

    def test_consistent_second_order(self, rng):
        x = rng.standard_normal(16)
        errs = {b: np.linalg.norm(gradient_step_prox_approx(x, lambda z: 2 * z, b, "consistent")
                                  - quadratic_prox_exact(x, 1.0, b)) for b in (125.0, 250.0, 500.0, 1000.0)}
        assert errs[1000.0] * 4 <= errs[500.0] * 1.01
        assert errs[1000.0] < errs[250.0] < errs[125.0]

    def test_alias_matches(self, rng):
        x = rng.standard_normal(3)
        assert_array_equal(gradient_step_prox_approx(x, lambda z: z, 4.0, "paper"),
                           gradient_step_prox_approx(x, lambda z: z, 4.0, "two_over_beta"))

    def test_bad_constant(self):
        with pytest.raises(ValueError):
            gradient_step_prox_approx(1.0, lambda z: z, 1.0, "other")


class TestDataFidelity:
    def test_beta_two_returns_y(self, rng):
        v = rng.random((1, 1, 6, 6))
        y = rng.random((1, 1, 6, 6))
        assert_allclose(data_fidelity_step(v, y, Kernel.delta(), 2.0), y, atol=1e-15)

    def test_beta_two_exact_from_y(self, rng):
        y = rng.random((1, 1, 6, 6)).astype(np.float32)
        assert_array_equal(data_fidelity_step(y.copy(), y, Kernel.delta(), 2.0), y)

    def test_scalar_broadcast(self):
        v = np.ones((1, 1, 3, 3))
        assert_allclose(data_fidelity_step(v, 0.0, Kernel.delta(), 8.0), 0.75)

    def test_fixed_point(self, rng):
        v = rng.random((1, 1, 5, 5))
        assert_array_equal(data_fidelity_step(v, v.copy(), Kernel.delta(), 8.0), v)

    def test_general_kernel(self, rng):
        taps = rng.random((3, 3))
        v = rng.random((1, 1, 7, 7))
        y = rng.random((1, 1, 7, 7))
        k = Kernel(taps)
        from proxsplit.tensor import conv2d_adjoint
        ref = v - 0.25 * conv2d_adjoint(conv2d(v, k) - y, k)
        assert_allclose(data_fidelity_step(v, y, k, 8.0), ref, rtol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            data_fidelity_step(rng.random((1, 1, 4, 4)), rng.random((1, 1, 3, 4)), Kernel.delta(), 8.0)

    def test_vjp_matches_jacobian(self, rng):
        taps = rng.random((3, 3))
        k = Kernel(taps)
        g = rng.standard_normal((1, 1, 5, 5))
        e = rng.standard_normal((1, 1, 5, 5))
        y = np.zeros((1, 1, 5, 5))
        # the step is affine in v, so J e = step(e) - step(0)
        je = data_fidelity_step(e, y, k, 8.0) - data_fidelity_step(np.zeros_like(e), y, k, 8.0)
        assert_allclose(np.vdot(g, je), np.vdot(data_fidelity_step_vjp(g, k, 8.0), e), rtol=1e-12)


class TestHqs:
    def test_identity_prior_beta_two(self, rng):
        y = rng.random((1, 1, 5, 5))
        x0 = rng.random((1, 1, 5, 5))
        x, trace = hqs_solve(y, Kernel.delta(), IdentityProx(), HqsConfig(beta=2.0, stages=4), x0)
        assert_allclose(trace[0][1], y, atol=1e-15)
        for _, xt in trace[1:]:
            assert_array_equal(xt, trace[0][1])

    def test_soft_threshold_single_stage(self, rng):
        y = rng.standard_normal((1, 1, 4, 4))
        x, trace = hqs_solve(y, Kernel.delta(), SoftThreshold(0.5, 2.0), HqsConfig(beta=2.0, stages=1))
        assert_allclose(x, y, atol=1e-15)
        x8, trace8 = hqs_solve(y, Kernel.delta(), SoftThreshold(0.5, 8.0), HqsConfig(beta=8.0, stages=1))
        v1 = trace8[0][0]
        assert_allclose(v1, soft_threshold(y, 0.5, 8.0))
        assert_allclose(x8, v1 - 0.25 * (v1 - y), rtol=1e-14)

    def test_quadratic_prior_fixed_point(self, rng):
        alpha, beta = 0.7, 8.0
        y = rng.random((1, 1, 4, 4))
        x, _ = hqs_solve(y, Kernel.delta(), QuadraticProx(alpha, beta), HqsConfig(beta=beta, stages=400))
        # scalar fixed-point iteration of the two maps, run to 1e-10
        p, s = beta / (beta + alpha), 2.0 / beta
        ref = y.copy()
        for _ in range(10000):
            new = (1 - s) * p * ref + s * y
            if np.max(np.abs(new - ref)) < 1e-10:
                break
            ref = new
        closed = s * y / (1 - (1 - s) * p)
        assert_allclose(x, closed, atol=1e-9)
        assert_allclose(ref, closed, atol=1e-9)

    def test_trace_length_and_shapes(self, rng):
        y = rng.random((1, 1, 6, 6))
        x, trace = hqs_solve(y, Kernel(np.full((3, 3), 1 / 9)), GradientStepProx(lambda z: 2 * z, 8.0),
                             HqsConfig(8.0, 3))
        assert len(trace) == 3
        assert all(v.shape == y.shape and xt.shape == y.shape for v, xt in trace)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            HqsConfig(beta=0.0)
        with pytest.raises(ValueError):
            HqsConfig(stages=0)
