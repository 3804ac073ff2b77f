"""Shared test fixtures and configuration."""

from functools import lru_cache

import numpy as np
import pytest

from src.problem import load_builtin
from src.system import ControlSystem, ExtrinsicProblem


@lru_cache(maxsize=None)
def _problem(name):
    return load_builtin(name)


@lru_cache(maxsize=None)
def _curve(name):
    return _problem(name).curve()


@pytest.fixture(scope="session")
def problem():
    """Built-in problem by name, parsed once per session."""
    return _problem


@pytest.fixture(scope="session")
def curve_of():
    """Integrated curve of a built-in problem, cached per session."""
    return _curve


@pytest.fixture(scope="session")
def system_of():
    return lambda name: _problem(name).system


@pytest.fixture
def rng():
    """Seeded generator so randomized suites are reproducible."""
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def free_particle():
    return ControlSystem.from_strings(["x"], ["z"], ["z"], "z^2/2", name="free-particle")


@pytest.fixture(scope="session")
def unit_speed_extrinsic():
    return ExtrinsicProblem.from_strings(["x", "y"], "1", ["x_dot^2 + y_dot^2 - v^2"], {"v": 1.0})
