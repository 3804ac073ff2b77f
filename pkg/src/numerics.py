"""Grid numerics shared by the core modules.

Uniform grids with an even number of steps, 4th-order differencing,
composite Simpson weights, the classical RK4 step and SVD rank/null space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.integrate
import scipy.linalg


def step_count(length: float, density: float) -> int:
    """Even number of RK4/Simpson steps for an interval, at least 4."""
    steps = max(4, math.ceil(length * density - 1e-9))
    return steps + steps % 2


def uniform_grid(t_start: float, t_end: float, steps: int) -> np.ndarray:
    grid = t_start + (t_end - t_start) * (np.arange(steps + 1) / steps)
    grid[0] = t_start
    grid[-1] = t_end
    return grid


def derivative(values: np.ndarray, h: float) -> np.ndarray:
    """4th-order derivative along axis 0: central inside, one-sided at both ends."""
    y = np.asarray(values, dtype=float)
    if y.shape[0] < 5:
        raise ValueError("4th-order differencing needs at least 5 samples")
    d = np.empty_like(y)
    d[2:-2] = (y[:-4] - 8.0 * y[1:-3] + 8.0 * y[3:-1] - y[4:]) / (12.0 * h)
    d[0] = (-25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2] + 16.0 * y[3] - 3.0 * y[4]) / (12.0 * h)
    d[1] = (-3.0 * y[0] - 10.0 * y[1] + 18.0 * y[2] - 6.0 * y[3] + y[4]) / (12.0 * h)
    d[-1] = (25.0 * y[-1] - 48.0 * y[-2] + 36.0 * y[-3] - 16.0 * y[-4] + 3.0 * y[-5]) / (12.0 * h)
    d[-2] = (3.0 * y[-1] + 10.0 * y[-2] - 18.0 * y[-3] + 6.0 * y[-4] - y[-5]) / (12.0 * h)
    return d


def simpson_weights(steps: int, h: float) -> np.ndarray:
    if steps % 2:
        raise ValueError("composite Simpson needs an even step count")
    weights = np.full(steps + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    return weights * (h / 3.0)


def integrate(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return scipy.integrate.simpson(values, x=grid, axis=0)


def cumulative_integral(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Running integral from grid[0], same shape as ``values``."""
    return scipy.integrate.cumulative_simpson(values, x=grid, axis=0, initial=0.0)


def rk4_step(
    rhs: Callable[[float, np.ndarray], np.ndarray], t: float, y: np.ndarray, h: float
) -> np.ndarray:
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class NullSpace:
    rank: int
    singular_values: np.ndarray
    basis: np.ndarray  # columns, orthonormal


def null_space(matrix: np.ndarray, tol: float) -> NullSpace:
    """Null space by SVD; singular values below tol * sigma_max count as zero."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    cols = a.shape[1]
    if a.shape[0] == 0:
        return NullSpace(0, np.zeros(0), np.eye(cols))
    _, s, vh = scipy.linalg.svd(a, full_matrices=True)
    scale = s[0] if s.size and s[0] > 0.0 else 1.0
    rank = int(np.count_nonzero(s > tol * scale))
    basis = vh[rank:].T.copy()
    for j in range(basis.shape[1]):
        pivot = np.argmax(np.abs(basis[:, j]))
        if basis[pivot, j] < 0.0:
            basis[:, j] = -basis[:, j]
    return NullSpace(rank, s, basis)
