"""Tests for multiplier recovery and the extrinsic correspondence."""

import numpy as np
import pytest

from src.curve import ControlPath, integrate_admissible
from src.errors import Inconsistent, RankDeficient, ValidationError
from src.extremal import candidate, i0_extremals
from src.multipliers import check_embedding, recover_multipliers, verify_correspondence
from src.system import ControlSystem, ExtrinsicProblem


def _constant(curve, values):
    return [np.tile(np.asarray(values, dtype=float), (arc.grid.size, 1)) for arc in curve.arcs]


class TestRecovery:
    """Test pointwise recovery of lambda."""

    def test_unit_speed_line(self, problem, curve_of):
        """On the straight unit-speed line lambda = p_x / 2."""
        prob = problem("unit-speed")
        curve = curve_of("unit-speed")
        cand = candidate(prob.system, curve, _constant(curve, [0.8, 0.0]))

        lam = recover_multipliers(prob.extrinsic, prob.system, cand)

        assert lam.m == 1
        np.testing.assert_allclose(lam.arcs[0], 0.4, atol=1e-12)
        assert lam.residual < 1e-12

    def test_null_functional_element(self, problem, curve_of):
        """A scaled annihilator element lifts with lambda = c / 2."""
        prob = problem("appb1-arc2")
        curve = curve_of("appb1-arc2")
        element = i0_extremals(prob.system, curve).momenta[1]
        cand = candidate(prob.system, curve, [3.0 * p for p in element.arcs])

        lam = recover_multipliers(prob.extrinsic, prob.system, cand)

        np.testing.assert_allclose(lam.arcs[0], 1.5, atol=1e-10)

    def test_inconsistent_momentum(self, problem, curve_of):
        """p = (0, 1) is not in the span of dg/dq' along the x axis."""
        prob = problem("unit-speed")
        curve = curve_of("unit-speed")
        cand = candidate(prob.system, curve, _constant(curve, [0.0, 1.0]))

        with pytest.raises(Inconsistent) as exc:
            recover_multipliers(prob.extrinsic, prob.system, cand)
        assert exc.value.residual == pytest.approx(1.0)

    def test_constraint_violation(self):
        """A curve off the constraint set is inconsistent before any solve."""
        sys = ControlSystem.from_strings(["x", "y"], ["z"], ["z", "1"])
        ext = ExtrinsicProblem.from_strings(["x", "y"], "0", ["y_dot"])
        curve = integrate_admissible(sys, ControlPath.constant([[1.0]]), [0.0, 0.0], (0.0, 1.0), grid_density=20)
        cand = candidate(sys, curve, _constant(curve, [0.0, 0.0]))

        with pytest.raises(Inconsistent, match="violates the extrinsic constraints"):
            recover_multipliers(ext, sys, cand)

    def test_constraint_tolerance(self):
        """A 1e-7 constraint violation passes by default and fails a tighter tolerance."""
        sys = ControlSystem.from_strings(["x", "y"], ["z"], ["z", "1"])
        ext = ExtrinsicProblem.from_strings(["x", "y"], "0", ["y_dot - 1.0000001"])
        curve = integrate_admissible(sys, ControlPath.constant([[1.0]]), [0.0, 0.0], (0.0, 1.0), grid_density=20)
        cand = candidate(sys, curve, _constant(curve, [0.0, 0.0]))

        lam = recover_multipliers(ext, sys, cand)
        np.testing.assert_allclose(lam.arcs[0], 0.0, atol=1e-12)

        with pytest.raises(Inconsistent, match="violates the extrinsic constraints"):
            recover_multipliers(ext, sys, cand, admissibility_tol=1e-9)

    def test_rank_loss(self):
        """dg/dq' vanishes where both velocities do."""
        sys = ControlSystem.from_strings(["x", "y"], ["z"], ["z", "0"])
        ext = ExtrinsicProblem.from_strings(["x", "y"], "0", ["x_dot*y_dot"])
        curve = integrate_admissible(sys, ControlPath.constant([[0.0]]), [0.0, 0.0], (0.0, 1.0), grid_density=20)
        cand = candidate(sys, curve, _constant(curve, [0.0, 0.0]))

        with pytest.raises(RankDeficient, match="loses rank"):
            recover_multipliers(ext, sys, cand)

    def test_constraint_count(self, problem, curve_of):
        """m must equal n - r."""
        prob = problem("unit-speed")
        curve = curve_of("unit-speed")
        cand = candidate(prob.system, curve, _constant(curve, [1.0, 0.0]))
        ext = ExtrinsicProblem.from_strings(["x", "y"], "1", ["x_dot^2 + y_dot^2 - v^2", "y"], {"v": 1.0})

        with pytest.raises(ValidationError, match="expected n - r = 1"):
            recover_multipliers(ext, prob.system, cand)


class TestCorrespondence:
    """Test the extrinsic Euler-Lagrange check."""

    def test_unit_speed_line(self, problem, curve_of):
        """The lifted extremal solves the extrinsic equations."""
        prob = problem("unit-speed")
        curve = curve_of("unit-speed")
        cand = candidate(prob.system, curve, _constant(curve, [0.8, 0.0]))
        lam = recover_multipliers(prob.extrinsic, prob.system, cand)

        report = verify_correspondence(prob.extrinsic, prob.system, cand, lam)

        assert report.passes(1e-9)
        assert report.to_dict()["max_residual"] == report.max_residual

    def test_broken_curve(self, problem, curve_of):
        """Across the heading corner the lifted momentum stays continuous."""
        prob = problem("appb1")
        curve = curve_of("appb1")
        cand = candidate(prob.system, curve, _constant(curve, [0.0, 0.0]))
        lam = recover_multipliers(prob.extrinsic, prob.system, cand)

        report = verify_correspondence(prob.extrinsic, prob.system, cand, lam)

        assert report.corner_momentum == 0.0
        assert report.multiplier_jumps == 0.0


class TestEmbedding:
    """Test that psi parametrizes the constraint set."""

    @pytest.mark.parametrize("name", ["appb1", "appb3", "unit-speed"])
    def test_builtin_embeddings(self, name, problem, curve_of):
        """Every built-in extrinsic section matches its control system."""
        prob = problem(name)
        report = check_embedding(prob.extrinsic, prob.system, curve_of(name))
        assert report.passes()

    def test_mismatched_lagrangian(self, problem, curve_of):
        """A different free Lagrangian is reported."""
        prob = problem("unit-speed")
        ext = ExtrinsicProblem.from_strings(["x", "y"], "2", ["x_dot^2 + y_dot^2 - v^2"], {"v": 1.0})
        report = check_embedding(ext, prob.system, curve_of("unit-speed"))

        assert report.lagrangian == pytest.approx(1.0)
        assert not report.passes()
