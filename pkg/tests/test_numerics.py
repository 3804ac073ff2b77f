"""Unit tests for grid numerics."""

import numpy as np
import pytest

from src.numerics import (
    cumulative_integral,
    derivative,
    integrate,
    null_space,
    rk4_step,
    simpson_weights,
    step_count,
    uniform_grid,
)


class TestGrid:
    """Test step counts and uniform grids."""

    def test_step_count_is_even(self):
        """Odd products are rounded up to the next even count."""
        assert step_count(1.0, 7) == 8
        assert step_count(1.0, 400) == 400

    def test_step_count_minimum(self):
        """Short intervals still get four steps."""
        assert step_count(1e-3, 10) == 4

    def test_grid_endpoints_exact(self):
        """Endpoints are the requested floats, not rounded sums."""
        grid = uniform_grid(0.1, 0.7, 6)
        assert grid[0] == 0.1
        assert grid[-1] == 0.7
        assert grid.size == 7


class TestQuadrature:
    """Test differencing and Simpson integration."""

    def test_derivative_exact_on_quartic(self):
        """4th-order stencils are exact for polynomials up to degree 4."""
        grid = uniform_grid(0.0, 1.0, 10)
        values = grid**4 - 2 * grid**3
        np.testing.assert_allclose(derivative(values, 0.1), 4 * grid**3 - 6 * grid**2, atol=1e-10)

    def test_derivative_needs_five_samples(self):
        """Fewer than five samples cannot carry the stencil."""
        with pytest.raises(ValueError, match="at least 5 samples"):
            derivative(np.zeros(4), 0.1)

    def test_simpson_weights_match_integral(self):
        """Weights reproduce the integral of a cubic exactly."""
        grid = uniform_grid(0.0, 2.0, 8)
        weights = simpson_weights(8, 0.25)
        assert weights @ grid**3 == pytest.approx(4.0)
        assert integrate(grid**3, grid) == pytest.approx(4.0)

    def test_simpson_rejects_odd_steps(self):
        """Composite Simpson is defined for even step counts only."""
        with pytest.raises(ValueError, match="even step count"):
            simpson_weights(5, 0.1)

    def test_cumulative_integral_starts_at_zero(self):
        """The running integral is zero at the first sample."""
        grid = uniform_grid(0.0, 1.0, 20)
        running = cumulative_integral(np.cos(grid), grid)
        assert running[0] == 0.0
        assert running[-1] == pytest.approx(np.sin(1.0), abs=1e-7)


class TestRK4:
    """Test the classical fourth-order step."""

    def test_exponential_growth(self):
        """One step of y' = y matches the Taylor polynomial of order 4."""
        h = 0.1
        y = rk4_step(lambda t, y: y, 0.0, np.array([1.0]), h)
        assert y[0] == pytest.approx(1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24)


class TestNullSpace:
    """Test SVD rank and null-space extraction."""

    def test_rank_and_basis(self):
        """A rank-one 2x3 matrix has a two-dimensional null space."""
        a = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
        ns = null_space(a, 1e-10)

        assert ns.rank == 1
        assert ns.basis.shape == (3, 2)
        np.testing.assert_allclose(a @ ns.basis, 0.0, atol=1e-12)
        np.testing.assert_allclose(ns.basis.T @ ns.basis, np.eye(2), atol=1e-12)

    def test_empty_matrix(self):
        """No rows means everything is in the null space."""
        ns = null_space(np.zeros((0, 2)), 1e-10)
        assert ns.rank == 0
        np.testing.assert_array_equal(ns.basis, np.eye(2))

    def test_sign_convention(self):
        """Each basis column has a positive largest entry."""
        ns = null_space(np.array([[1.0, 1.0]]), 1e-10)
        column = ns.basis[:, 0]
        assert column[np.argmax(np.abs(column))] > 0
