"""Tests for extremal residuals, Hamiltonian reduction, shooting and gauge invariance."""

import numpy as np
import pytest

from src.curve import ControlPath, integrate_admissible
from src.errors import NoConvergence, RegularityFailure, ValidationError
from src.extremal import (
    NO_CERTIFICATE,
    ShootingSeeds,
    _Layout,
    action_integral,
    candidate,
    first_variation,
    gauge_transform,
    hamiltonian_along,
    integrate_hamilton,
    reduce_hamiltonian,
    shoot_extremal,
    stationarity_check,
)
from src.system import ControlSystem
from src.transport import DeformationDatum


def _constant_momenta(curve, values):
    return [np.tile(np.asarray(values, dtype=float), (arc.grid.size, 1)) for arc in curve.arcs]


class TestResiduals:
    """Test the extremal residual report."""

    def test_free_particle_extremal(self, free_particle, curve_of):
        """q = t with p = 1 solves every extremal equation."""
        curve = curve_of("free-particle")
        cand = candidate(free_particle, curve, _constant_momenta(curve, [1.0]))

        assert cand.residuals.passes(1e-9)
        assert cand.residuals.hamiltonian_regularity == pytest.approx(1.0)
        np.testing.assert_allclose(cand.momenta.p0[0], -0.5)

    def test_wrong_momentum(self, free_particle, curve_of):
        """p = 0.5 leaves dH/dz = p - z = -0.5."""
        curve = curve_of("free-particle")
        cand = candidate(free_particle, curve, _constant_momenta(curve, [0.5]))

        assert cand.residuals.stationarity == pytest.approx(0.5)
        assert not cand.residuals.passes()

    def test_broken_extremal(self, system_of, curve_of):
        """Double well: p = 0 on both branches, H = 0 across the corner."""
        sys, curve = system_of("double-well"), curve_of("double-well")
        cand = candidate(sys, curve, _constant_momenta(curve, [0.0]))

        assert cand.residuals.passes(1e-9)
        assert cand.residuals.corner_H == 0.0
        assert cand.corner_times == (0.5,)

    def test_hamiltonian_along(self, free_particle, curve_of):
        """H = p z - z^2/2 = 1/2 along the free-particle extremal."""
        curve = curve_of("free-particle")
        cand = candidate(free_particle, curve, _constant_momenta(curve, [1.0]))
        (values,) = hamiltonian_along(free_particle, cand)
        np.testing.assert_allclose(values, 0.5)

    def test_momenta_shape(self, free_particle, curve_of):
        """Momenta must cover every arc sample."""
        with pytest.raises(ValidationError, match="do not match"):
            candidate(free_particle, curve_of("free-particle"), [np.ones((3, 1))])


class TestReducedHamiltonian:
    """Test elimination of z at regular points."""

    def test_free_particle(self, free_particle):
        """z* = p and H = p^2/2."""
        red = reduce_hamiltonian(free_particle, [0.0])

        np.testing.assert_allclose(red.solve(0.0, np.array([0.0]), np.array([1.5])), [1.5])
        assert red.value(0.0, [0.0], [1.5]) == pytest.approx(1.125)
        dH_dq, dH_dp = red.gradients(0.0, [0.0], [1.5])
        np.testing.assert_allclose(dH_dp, [1.5])
        np.testing.assert_allclose(dH_dq, [0.0])

    def test_degenerate_hessian(self):
        """psi = z, L = z with p = 1: every z is stationary and the Hessian vanishes."""
        sys = ControlSystem.from_strings(["x"], ["z"], ["z"], "z")
        with pytest.raises(RegularityFailure, match="singular point"):
            reduce_hamiltonian(sys, [0.0]).solve(0.0, np.array([0.0]), np.array([1.0]))

    def test_no_stationary_point(self):
        """With p = 2 the gradient never vanishes and Newton cannot step."""
        sys = ControlSystem.from_strings(["x"], ["z"], ["z"], "z")
        with pytest.raises(RegularityFailure, match="singular Hessian"):
            reduce_hamiltonian(sys, [0.0]).solve(0.0, np.array([0.0]), np.array([2.0]))

    def test_seed_selects_branch(self, system_of):
        """Double well at p = 0: the seed picks z = +1 or z = -1."""
        sys = system_of("double-well")
        up = reduce_hamiltonian(sys, [0.9]).solve(0.0, np.array([0.0]), np.array([0.0]))
        down = reduce_hamiltonian(sys, [-0.9]).solve(0.0, np.array([0.0]), np.array([0.0]))
        np.testing.assert_allclose(up, [1.0])
        np.testing.assert_allclose(down, [-1.0])


class TestHamiltonFlow:
    """Test RK4 on the reduced Hamiltonian system."""

    def test_straight_line(self, free_particle):
        """Constant momentum, linear state."""
        traj = integrate_hamilton(reduce_hamiltonian(free_particle), [0.0], [2.0], (0.0, 1.0), grid_density=20)

        np.testing.assert_allclose(traj.q[:, 0], 2.0 * traj.grid, atol=1e-12)
        np.testing.assert_allclose(traj.p, 2.0)
        assert traj.residuals.passes(1e-9)

    def test_zero_span(self, free_particle):
        """Equal endpoints give a single point with zero residuals."""
        traj = integrate_hamilton(reduce_hamiltonian(free_particle), [0.0], [1.0], (0.5, 0.5))
        assert traj.is_point
        assert traj.residuals.max_residual == 0.0

    def test_backwards_span(self, free_particle):
        """t1 < t0 is rejected."""
        with pytest.raises(ValidationError, match="backwards"):
            integrate_hamilton(reduce_hamiltonian(free_particle), [0.0], [1.0], (1.0, 0.0))


class TestShooting:
    """Test fixed-endpoint shooting."""

    def test_free_particle(self, free_particle):
        """From 0 to 1 in unit time: p = 1, q = t."""
        progress = []
        cand = shoot_extremal(
            free_particle,
            [0.0],
            [1.0],
            (0.0, 1.0),
            seeds=ShootingSeeds((0.5,), z=((0.5,),)),
            grid_density=100,
            on_progress=lambda k, norm: progress.append(norm),
        )

        np.testing.assert_allclose(cand.momenta.initial, [1.0], atol=1e-8)
        np.testing.assert_allclose(cand.curve.q_end, [1.0], atol=1e-8)
        assert cand.abnormality.normal
        assert cand.notes == ()
        assert progress[-1] <= 1e-8

    def test_broken_double_well(self, system_of):
        """The corner settles where the two branches return the state to 0."""
        cand = shoot_extremal(
            system_of("double-well"),
            [0.0],
            [0.0],
            (0.0, 1.0),
            n_corners=1,
            seeds=ShootingSeeds((0.0,), (0.4,), ((1.0,), (-1.0,))),
            grid_density=100,
        )

        assert cand.corner_times[0] == pytest.approx(0.5, abs=1e-6)
        assert cand.residuals.passes(1e-6)

    def test_abnormal_solution_is_flagged(self, system_of):
        """Unit speed between points at unit distance: converges, but momenta are not unique."""
        cand = shoot_extremal(
            system_of("unit-speed"),
            [0.0, 0.0],
            [1.0, 0.0],
            (0.0, 1.0),
            seeds=ShootingSeeds((1.0, 0.2), z=((0.1,),)),
            grid_density=100,
        )

        assert cand.abnormality.index == 1
        assert any("abnormal" in note for note in cand.notes)
        assert any("rank-deficient" in note for note in cand.notes)

    def test_unknown_layout(self):
        """Unknowns are p(t0), the corner times, then one restarted momentum per corner."""
        p_start, corners, restarts = _Layout(2, 2).split(np.arange(8.0))

        np.testing.assert_array_equal(p_start, [0.0, 1.0])
        np.testing.assert_array_equal(corners, [2.0, 3.0])
        np.testing.assert_array_equal(restarts, [[4.0, 5.0], [6.0, 7.0]])

    def test_energy_along_solution(self):
        """L = (z^2 + x^2)/2: H = p z - L is conserved and p0 = -H."""
        sys = ControlSystem.from_strings(["x"], ["z"], ["z"], "(z^2 + x^2)/2", name="oscillator")
        cand = shoot_extremal(sys, [0.0], [1.0], (0.0, 1.0), seeds=ShootingSeeds((0.5,), z=((0.5,),)), grid_density=200)
        (energy,) = hamiltonian_along(sys, cand)

        np.testing.assert_allclose(cand.momenta.initial, [1.0 / np.sinh(1.0)], atol=1e-7)
        np.testing.assert_allclose(energy, 0.5 / np.sinh(1.0) ** 2, atol=1e-7)
        np.testing.assert_allclose(cand.momenta.p0[0], -energy, atol=1e-12)

    def test_seed_dimension(self, free_particle):
        """The momentum seed must have length n."""
        with pytest.raises(ValidationError, match="p0 seed"):
            shoot_extremal(free_particle, [0.0], [1.0], (0.0, 1.0), seeds=ShootingSeeds((0.0, 0.0)))

    def test_corner_seed_count(self, system_of):
        """One corner time per corner."""
        with pytest.raises(ValidationError, match="corner seeds"):
            shoot_extremal(
                system_of("double-well"), [0.0], [0.0], (0.0, 1.0), n_corners=1,
                seeds=ShootingSeeds((0.0,), (0.3, 0.6)),
            )

    @pytest.mark.slow
    def test_unreachable_target(self, system_of):
        """No unit-speed curve covers distance 2 in unit time."""
        with pytest.raises(NoConvergence) as exc:
            shoot_extremal(
                system_of("unit-speed-unreachable"),
                [0.0, 0.0],
                [2.0, 0.0],
                (0.0, 1.0),
                seeds=ShootingSeeds((1.0, 0.2), z=((0.1,),)),
                grid_density=100,
            )
        assert NO_CERTIFICATE in str(exc.value)
        assert exc.value.best is not None

    @pytest.mark.slow
    def test_brockett(self, system_of):
        """Straight motion along x is the normal extremal with p = (1, 0, 0)."""
        cand = shoot_extremal(
            system_of("brockett"),
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            (0.0, 1.0),
            seeds=ShootingSeeds((0.5, 0.1, 0.1), z=((1.0, 0.0),)),
            grid_density=100,
        )

        np.testing.assert_allclose(cand.momenta.initial, [1.0, 0.0, 0.0], atol=1e-6)
        assert cand.abnormality.normal


class TestGauge:
    """Test invariance under L -> L + df/dt."""

    def test_free_particle_gauge(self, free_particle, curve_of):
        """f = x + t shifts p by 1 and keeps the curve an extremal."""
        curve = curve_of("free-particle")
        cand = candidate(free_particle, curve, _constant_momenta(curve, [1.0]))
        gauged_sys, gauged = gauge_transform(free_particle, cand, "x + t")

        assert gauged.curve is cand.curve
        np.testing.assert_allclose(gauged.momenta.arcs[0], 2.0)
        assert gauged.residuals.passes(1e-9)
        assert action_integral(gauged_sys, curve) == pytest.approx(action_integral(free_particle, curve) + 2.0)

    def test_state_dependent_gauge_on_brockett(self, system_of, curve_of):
        """A nonlinear f keeps the extremal residuals at their previous level."""
        sys, curve = system_of("brockett"), curve_of("brockett")
        cand = candidate(sys, curve, _constant_momenta(curve, [1.0, 0.0, 0.0]))
        _, gauged = gauge_transform(sys, cand, "x*y + sin(s) + t^2")

        assert cand.residuals.passes(1e-8)
        assert gauged.residuals.passes(1e-6)

    @pytest.mark.parametrize(
        "f, dfdx",
        [("t", lambda t: 0.0 * t), ("x", lambda t: 1.0 + 0.0 * t), ("t*x", lambda t: t)],
    )
    def test_elementary_gauges(self, free_particle, curve_of, f, dfdx):
        """p shifts by df/dx, the curve is shared and the residuals stay zero."""
        curve = curve_of("free-particle")
        cand = candidate(free_particle, curve, _constant_momenta(curve, [1.0]))
        _, gauged = gauge_transform(free_particle, cand, f)

        assert gauged.curve is cand.curve
        np.testing.assert_allclose(gauged.momenta.arcs[0][:, 0], 1.0 + dfdx(curve.arcs[0].grid), atol=1e-14)
        assert gauged.residuals.passes(1e-8)

    def test_gauge_may_not_use_controls(self, free_particle, curve_of):
        """f depends on t and q only."""
        curve = curve_of("free-particle")
        cand = candidate(free_particle, curve, _constant_momenta(curve, [1.0]))
        with pytest.raises(ValidationError, match="only depend on t and the states"):
            gauge_transform(free_particle, cand, "z*t")


class TestVariations:
    """Test the action and its first variation."""

    def test_action(self, free_particle, curve_of):
        """The free particle at unit speed has action 1/2."""
        assert action_integral(free_particle, curve_of("free-particle")) == pytest.approx(0.5)

    def test_first_variation_is_boundary_term(self, free_particle, curve_of):
        """On an extremal only p X(t1) remains: here the integral of U."""
        curve = curve_of("free-particle")
        cand = candidate(free_particle, curve, _constant_momenta(curve, [1.0]))
        grid = curve.arcs[0].grid
        datum = DeformationDatum((np.cos(grid)[:, None],), np.zeros(0), np.zeros(1))

        assert first_variation(free_particle, cand, datum) == pytest.approx(np.sin(1.0), abs=1e-9)

    @pytest.mark.slow
    def test_stationarity_of_free_particle(self, free_particle):
        """Fixed-endpoint deformations leave the action stationary."""
        curve = integrate_admissible(free_particle, ControlPath.constant([[1.0]]), [0.0], (0.0, 1.0), grid_density=100)
        cand = candidate(free_particle, curve, _constant_momenta(curve, [1.0]))
        report = stationarity_check(free_particle, cand, samples=4)

        assert report.passes()
        assert max(report.endpoint_defects) < 1e-10
        np.testing.assert_allclose(report.first_variations, 0.0, atol=1e-8)

    @pytest.mark.slow
    def test_stationarity_of_broken_extremal(self, system_of, curve_of):
        """Double well: deformations that also move the corner leave the action stationary."""
        sys, curve = system_of("double-well"), curve_of("double-well")
        cand = candidate(sys, curve, _constant_momenta(curve, [0.0]))
        report = stationarity_check(sys, cand, samples=4)

        assert report.passes()
        assert report.max_derivative <= 1e-5

    @pytest.mark.slow
    def test_non_extremal_moves_the_action(self, system_of, curve_of):
        """A curve that is not an extremal has nonzero directional derivatives."""
        sys = system_of("holonomic")
        curve = integrate_admissible(
            sys, ControlPath.from_expressions([["1 + t", "2"]]), [0.0, 0.0], (0.0, 1.0), grid_density=100
        )
        cand = candidate(sys, curve, _constant_momenta(curve, [1.5, 2.0]))
        report = stationarity_check(sys, cand, samples=4)

        assert not report.passes()
