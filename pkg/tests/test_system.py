"""Unit tests for control systems and their extrinsic form."""

import numpy as np
import pytest

from src.errors import NonFinite, ValidationError
from src.expr import parse
from src.system import ControlSystem, check_rank, evaluate_point, pontryagin_hessian


class TestValidation:
    """Test construction-time checks."""

    def test_psi_count_must_match_states(self):
        """One component of psi per state."""
        with pytest.raises(ValidationError, match="psi count 1 ≠ n 2"):
            ControlSystem.from_strings(["x", "y"], ["z"], ["z"])

    def test_more_controls_than_states(self):
        """r may not exceed n."""
        with pytest.raises(ValidationError, match="r 2 > n 1"):
            ControlSystem.from_strings(["x"], ["u", "w"], ["u + w"])

    def test_undeclared_symbol(self):
        """psi may only use states, controls, t and parameters."""
        with pytest.raises(ValidationError, match=r"psi\[0\] uses undeclared symbol\(s\) k"):
            ControlSystem.from_strings(["x"], ["z"], ["k*z"])

    def test_unset_parameter(self):
        """Declared parameters must carry a value."""
        with pytest.raises(ValidationError, match="unset parameter"):
            ControlSystem(("x",), ("z",), (parse("k*z", ["k"]),), parse("0"), {})

    def test_reserved_time_name(self):
        """'t' cannot name a state."""
        with pytest.raises(ValidationError, match="reserved"):
            ControlSystem.from_strings(["t"], ["z"], ["z"])

    def test_state_control_clash(self):
        """A name cannot be both state and control."""
        with pytest.raises(ValidationError, match="both as state and control"):
            ControlSystem.from_strings(["x"], ["x"], ["x"])


class TestEvaluation:
    """Test values and partial derivatives."""

    def test_heading_jacobian(self, system_of):
        """Planar heading system: d psi/d z = v (-sin z, cos z)."""
        sys = system_of("appb1")
        bundle = evaluate_point(sys, 0.0, [0.0, 0.0], [0.3])

        np.testing.assert_allclose(bundle.psi, [np.cos(0.3), np.sin(0.3)])
        np.testing.assert_allclose(bundle.dpsi_dz[:, 0], [-np.sin(0.3), np.cos(0.3)])
        np.testing.assert_allclose(bundle.dpsi_dq, 0.0)

    def test_batched_shapes(self, system_of):
        """A leading sample axis flows through every table."""
        sys = system_of("brockett")
        t = np.linspace(0.0, 1.0, 5)
        bundle = sys.evaluate(t, np.zeros((5, 3)), np.ones((5, 2)))

        assert bundle.psi.shape == (5, 3)
        assert bundle.dpsi_dq.shape == (5, 3, 3)
        assert bundle.dpsi_dz.shape == (5, 3, 2)
        assert bundle.lagrangian.shape == (5,)

    def test_brockett_state_dependence(self, system_of):
        """The third component couples states and controls."""
        sys = system_of("brockett")
        bundle = evaluate_point(sys, 0.0, [1.0, 2.0, 0.0], [3.0, 4.0])

        assert bundle.psi[2] == pytest.approx(1.0 * 4.0 - 2.0 * 3.0)
        np.testing.assert_allclose(bundle.dpsi_dq[2], [4.0, -3.0, 0.0])
        np.testing.assert_allclose(bundle.dpsi_dz[2], [-2.0, 1.0])

    def test_dimension_mismatch(self, system_of):
        """Point vectors must match (n, r)."""
        with pytest.raises(ValidationError, match="expected"):
            evaluate_point(system_of("appb1"), 0.0, [0.0], [0.0])

    def test_non_finite_is_reported(self):
        """A pole in psi raises NonFinite naming the component."""
        sys = ControlSystem.from_strings(["x"], ["z"], ["z/x"])
        with pytest.raises(NonFinite, match=r"psi\[0\]"):
            sys.evaluate_psi(0.0, np.array([0.0]), np.array([0.0]))

    def test_scaled(self, system_of):
        """scaled multiplies psi by a constant."""
        sys = system_of("holonomic").scaled(2.0)
        np.testing.assert_allclose(sys.evaluate_psi(0.0, np.zeros(2), np.array([1.0, 2.0])), [2.0, 4.0])


class TestHamiltonianPieces:
    """Test the control gradient and Pontryagin Hessian."""

    def test_control_gradient_holonomic(self, system_of):
        """For psi = z and L = |z|^2/2 the gradient is p - z."""
        sys = system_of("holonomic")
        grad = sys.control_gradient(0.0, np.zeros(2), np.array([0.5, -1.0]), np.array([1.0, 1.0]))
        np.testing.assert_allclose(grad, [0.5, 2.0])

    def test_hessian_holonomic(self, system_of):
        """The Hessian is -I, independent of p."""
        hess = pontryagin_hessian(system_of("holonomic"), 0.0, [0, 0], [1, 2], [3, 4])
        np.testing.assert_allclose(hess, -np.eye(2))

    def test_hessian_is_symmetric(self, system_of):
        """Mixed second derivatives are mirrored exactly."""
        sys = ControlSystem.from_strings(["x", "y"], ["u", "w"], ["u*w^2", "sin(u*w)"], "u^3*w")
        hess = pontryagin_hessian(sys, 0.1, [0, 0], [0.4, 0.7], [1.3, -0.2])
        assert np.array_equal(hess, hess.T)


class TestRank:
    """Test the rank certificate of d psi/d z."""

    def test_full_rank(self, system_of):
        """The heading system has rank one everywhere."""
        cert = check_rank(system_of("appb1"), 0.0, [0, 0], [0.7])
        assert cert.ok

    def test_rank_drop(self):
        """psi = z^2 loses rank at z = 0."""
        sys = ControlSystem.from_strings(["x"], ["z"], ["z^2"])
        assert not check_rank(sys, 0.0, [0.0], [0.0]).ok
        assert check_rank(sys, 0.0, [0.0], [1.0]).ok


class TestExtrinsic:
    """Test the free Lagrangian with velocity constraints."""

    def test_unit_speed_constraint(self, unit_speed_extrinsic):
        """g vanishes at unit speed; its velocity gradient is 2 q'."""
        bundle = unit_speed_extrinsic.evaluate(0.0, np.zeros(2), np.array([0.6, 0.8]))

        assert unit_speed_extrinsic.m == 1
        assert bundle.g[0] == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(bundle.dg_dqdot[0], [1.2, 1.6])
        np.testing.assert_allclose(bundle.dL_dqdot, 0.0)

    def test_velocity_names_default(self, unit_speed_extrinsic):
        """Velocities default to <state>_dot."""
        assert unit_speed_extrinsic.velocity_names == ("x_dot", "y_dot")
