"""Pontryagin Hamiltonian, extremal residuals, reduction and multiple shooting.

H = p_i psi^i - L. A candidate (curve, momenta) is an extremal when

- q' = psi (admissibility),
- p' = -(p dpsi/dq - dL/dq),
- p dpsi/dz - dL/dz = 0,
- p and H are continuous at every corner.

At regular points (Hessian of H in z nonsingular) z is eliminated by Newton
and the problem becomes a free Hamiltonian system in (q, p), which is what
``shoot_extremal`` integrates segment by segment.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .abnormality import AbnormalityReport, abnormality_index, annihilator
from .config import settings
from .curve import (
    Arc,
    ControlPath,
    CovectorPath,
    FunctionControl,
    PiecewiseCurve,
    admissibility_residual,
    corner_jumps,
    integrate_admissible,
)
from .errors import (
    IntegrationFailure,
    NoConvergence,
    NonFinite,
    RegularityFailure,
    ValidationError,
    VarcalcError,
)
from .expr import Expression, add, compile_expression, differentiate, free_symbols, mul, parse
from .numerics import cumulative_integral, derivative, integrate, rk4_step, step_count, uniform_grid
from .system import ControlSystem
from .transport import DeformationDatum, endpoint_map, transport_frame, variational_integrate

logger = logging.getLogger(__name__)

NO_CERTIFICATE = "no extremal momenta certificate found (not a proof that the curve is not extremal)"


# ── Types ───────────────────────────────────────────


@dataclass(frozen=True)
class HamiltonianValue:
    H: float
    dH_dq: np.ndarray
    dH_dp: np.ndarray
    dH_dz: np.ndarray


@dataclass(frozen=True)
class ResidualReport:
    ode_q: float
    ode_p: float
    stationarity: float
    corner_p: float
    corner_H: float
    hamiltonian_regularity: float
    p0_defect: float = 0.0

    @classmethod
    def zero(cls) -> ResidualReport:
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, math.inf, 0.0)

    @property
    def max_residual(self) -> float:
        return max(self.ode_q, self.ode_p, self.stationarity, self.corner_p, self.corner_H)

    def passes(self, tol: float | None = None) -> bool:
        tol = settings.acceptance_tol if tol is None else tol
        return self.max_residual <= tol

    def to_dict(self) -> dict[str, float]:
        return {
            "ode_q": self.ode_q,
            "ode_p": self.ode_p,
            "stationarity": self.stationarity,
            "corner_p": self.corner_p,
            "corner_H": self.corner_H,
            "hamiltonian_regularity": self.hamiltonian_regularity,
            "p0_defect": self.p0_defect,
            "max_residual": self.max_residual,
        }


@dataclass(frozen=True, eq=False)
class ExtremalCandidate:
    curve: PiecewiseCurve
    momenta: CovectorPath
    residuals: ResidualReport | None = None
    abnormality: AbnormalityReport | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.momenta.matches(self.curve):
            raise ValidationError("momenta do not match the curve's arcs and dimensions")

    @property
    def corner_times(self) -> tuple[float, ...]:
        return self.curve.corner_times


@dataclass(frozen=True, eq=False)
class HamiltonianTrajectory:
    """Output of ``integrate_hamilton``: (q, p, z*) on one grid."""

    sys: ControlSystem
    grid: np.ndarray
    q: np.ndarray
    p: np.ndarray
    z: np.ndarray

    @property
    def is_point(self) -> bool:
        return self.grid.size == 1

    def to_candidate(self) -> ExtremalCandidate:
        if self.is_point:
            raise ValidationError("a zero time span has no arc to build a candidate from")
        arc = Arc(float(self.grid[0]), float(self.grid[-1]), self.grid, self.q, self.z)
        curve = PiecewiseCurve((arc,))
        momenta = _with_p0(self.sys, curve, (self.p,))
        return ExtremalCandidate(curve, momenta, extremal_residuals(self.sys, curve, momenta))

    @property
    def residuals(self) -> ResidualReport:
        if self.is_point:
            return ResidualReport.zero()
        return self.to_candidate().residuals  # type: ignore[return-value]


# ── Hamiltonian ─────────────────────────────────────


def pontryagin_H(
    sys: ControlSystem, t: float, q: Sequence[float], z: Sequence[float], p: Sequence[float]
) -> HamiltonianValue:
    q_arr, z_arr, p_arr = (np.asarray(v, dtype=float) for v in (q, z, p))
    if p_arr.shape != (sys.n,):
        raise ValidationError(f"momentum length {p_arr.shape} ≠ n {sys.n}")
    b = sys.evaluate(float(t), q_arr, z_arr)
    return HamiltonianValue(
        H=float(p_arr @ b.psi - b.lagrangian),
        dH_dq=p_arr @ b.dpsi_dq - b.dL_dq,
        dH_dp=b.psi,
        dH_dz=p_arr @ b.dpsi_dz - b.dL_dz,
    )


def hamiltonian_along(sys: ControlSystem, cand: ExtremalCandidate) -> tuple[np.ndarray, ...]:
    """H = p psi - L sampled on every arc."""
    return tuple(
        np.einsum("gi,gi->g", p, arc.velocity(sys)) - sys.evaluate_lagrangian(arc.grid, arc.q, arc.z)
        for arc, p in zip(cand.curve.arcs, cand.momenta.arcs)
    )


def _with_p0(sys: ControlSystem, curve: PiecewiseCurve, momenta: Sequence[np.ndarray]) -> CovectorPath:
    p0 = tuple(
        sys.evaluate_lagrangian(arc.grid, arc.q, arc.z) - np.einsum("gi,gi->g", p, arc.velocity(sys))
        for arc, p in zip(curve.arcs, momenta)
    )
    return CovectorPath(tuple(momenta), p0)


def extremal_residuals(
    sys: ControlSystem, curve: PiecewiseCurve, momenta: CovectorPath
) -> ResidualReport:
    """Sup-norm residuals of the extremal equations, differenced at 4th order."""
    if not momenta.matches(curve):
        raise ValidationError("momenta do not match the curve's arcs and dimensions")
    ode_p = stationarity = 0.0
    regularity = math.inf
    p0_defect = 0.0
    p0_running: float | None = None
    for arc, p in zip(curve.arcs, momenta.arcs):
        b = sys.evaluate(arc.grid, arc.q, arc.z)
        dp = derivative(p, arc.h)
        ode = dp + np.einsum("gik,gi->gk", b.dpsi_dq, p) - b.dL_dq
        ode_p = max(ode_p, float(np.max(np.abs(ode), initial=0.0)))
        grad = np.einsum("gi,gia->ga", p, b.dpsi_dz) - b.dL_dz
        stationarity = max(stationarity, float(np.max(np.abs(grad), initial=0.0)))
        hess = sys.pontryagin_hessian(arc.grid, arc.q, arc.z, p)
        regularity = min(regularity, float(np.min(np.abs(np.linalg.det(hess)))))

        # p0 = L - p psi must follow dp0/dt = dL/dt - p dpsi/dt
        p0 = b.lagrangian - np.einsum("gi,gi->g", p, b.psi)
        rate = b.dL_dt - np.einsum("gi,gi->g", p, b.dpsi_dt)
        start = p0[0] if p0_running is None else p0_running
        evolved = start + cumulative_integral(rate, arc.grid)
        p0_defect = max(p0_defect, float(np.max(np.abs(evolved - p0))))
        p0_running = float(evolved[-1])

    corner_p = float(np.max(momenta.corner_jumps(), initial=0.0))
    corner_H = 0.0
    for s, (left, right) in enumerate(zip(curve.arcs, curve.arcs[1:])):
        p_left, p_right = momenta.arcs[s][-1], momenta.arcs[s + 1][0]
        t = right.t_start
        h_left = p_left @ sys.evaluate_psi(t, left.q[-1], left.z[-1]) - sys.evaluate_lagrangian(t, left.q[-1], left.z[-1])
        h_right = p_right @ sys.evaluate_psi(t, right.q[0], right.z[0]) - sys.evaluate_lagrangian(t, right.q[0], right.z[0])
        corner_H = max(corner_H, abs(float(h_right - h_left)))

    return ResidualReport(
        ode_q=admissibility_residual(sys, curve),
        ode_p=ode_p,
        stationarity=stationarity,
        corner_p=corner_p,
        corner_H=corner_H,
        hamiltonian_regularity=regularity,
        p0_defect=p0_defect,
    )


def candidate(sys: ControlSystem, curve: PiecewiseCurve, momenta: Sequence[np.ndarray]) -> ExtremalCandidate:
    """Candidate with p0 = L - p psi attached and residuals computed."""
    if len(momenta) != len(curve.arcs) or any(
        np.shape(p) != (arc.grid.size, curve.n) for p, arc in zip(momenta, curve.arcs)
    ):
        raise ValidationError("momenta do not match the curve's arcs and dimensions")
    path = _with_p0(sys, curve, momenta)
    return ExtremalCandidate(curve, path, extremal_residuals(sys, curve, path))


# ── Hamiltonian reduction ───────────────────────────


class ReducedHamiltonian:
    """H(t, q, p) = H(t, q, z*(t, q, p), p) with z* from Newton on dH/dz = 0.

    Newton stops once max |dH/dz| <= tol * (1 + max |p|), a threshold relative
    to the momentum scale. The last solution is cached and used as the next
    starting point.
    """

    def __init__(
        self,
        sys: ControlSystem,
        z_seed: Sequence[float],
        tol: float | None = None,
        max_iter: int | None = None,
        regularity_tol: float | None = None,
    ) -> None:
        seed = np.asarray(z_seed, dtype=float).reshape(-1)
        if seed.shape != (sys.r,):
            raise ValidationError(f"z seed length {seed.size} ≠ r {sys.r}")
        self.sys = sys
        self.z_last = seed.copy()
        self.tol = settings.newton_tol if tol is None else tol
        self.max_iter = settings.newton_max_iter if max_iter is None else max_iter
        self.regularity_tol = settings.regularity_tol if regularity_tol is None else regularity_tol
        self.hessian_det = math.nan

    def solve(self, t: float, q: np.ndarray, p: np.ndarray) -> np.ndarray:
        sys = self.sys
        z = self.z_last.copy()
        if sys.r == 0:
            self.hessian_det = 1.0
            return z
        threshold = self.tol * (1.0 + float(np.max(np.abs(p))))
        for iteration in range(self.max_iter + 1):
            try:
                grad = sys.control_gradient(t, q, z, p)
                hess = sys.pontryagin_hessian(t, q, z, p)
            except NonFinite as exc:
                raise RegularityFailure(f"Newton left the domain of H ({exc.what})", t) from exc
            if float(np.max(np.abs(grad))) <= threshold:
                det = float(np.linalg.det(hess))
                if abs(det) < self.regularity_tol:
                    raise RegularityFailure(f"singular point: |det d2H/dz2| = {abs(det):.3e}", t)
                self.hessian_det = det
                self.z_last = z
                return z.copy()
            if iteration == self.max_iter:
                break
            try:
                z = z - np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError as exc:
                raise RegularityFailure("singular Hessian during Newton", t) from exc
        raise NoConvergence(f"Newton on dH/dz did not converge at t = {t:.6g}", best=z)

    def value(self, t: float, q: Sequence[float], p: Sequence[float]) -> float:
        q_arr, p_arr = np.asarray(q, dtype=float), np.asarray(p, dtype=float)
        return pontryagin_H(self.sys, t, q_arr, self.solve(t, q_arr, p_arr), p_arr).H

    def gradients(self, t: float, q: Sequence[float], p: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
        """(dH/dq, dH/dp) through the envelope identities at z*."""
        q_arr, p_arr = np.asarray(q, dtype=float), np.asarray(p, dtype=float)
        value = pontryagin_H(self.sys, t, q_arr, self.solve(t, q_arr, p_arr), p_arr)
        return value.dH_dq, value.dH_dp


def reduce_hamiltonian(sys: ControlSystem, z_seed: Sequence[float] | None = None) -> ReducedHamiltonian:
    return ReducedHamiltonian(sys, np.zeros(sys.r) if z_seed is None else z_seed)


def integrate_hamilton(
    red: ReducedHamiltonian,
    q0: Sequence[float],
    p0: Sequence[float],
    t_span: tuple[float, float],
    steps: int | None = None,
    grid_density: float | None = None,
) -> HamiltonianTrajectory:
    """RK4 on q' = psi(z*), p' = -(p dpsi/dq - dL/dq) at z*."""
    sys = red.sys
    t0, t1 = float(t_span[0]), float(t_span[1])
    y = np.concatenate([np.asarray(q0, dtype=float), np.asarray(p0, dtype=float)])
    if y.shape != (2 * sys.n,):
        raise ValidationError(f"q0 and p0 must both have length {sys.n}")
    n = sys.n

    if t1 == t0:
        z = red.solve(t0, y[:n], y[n:])
        return HamiltonianTrajectory(sys, np.array([t0]), y[None, :n], y[None, n:], z[None, :])
    if t1 < t0:
        raise ValidationError(f"time span [{t0}, {t1}] runs backwards")

    if steps is None:
        density = settings.steps_per_unit if grid_density is None else grid_density
        steps = step_count(t1 - t0, density)
    grid = uniform_grid(t0, t1, steps)
    h = (t1 - t0) / steps

    def rhs(t: float, state: np.ndarray) -> np.ndarray:
        q, p = state[:n], state[n:]
        z = red.solve(t, q, p)
        try:
            b = sys.evaluate(t, q, z)
        except NonFinite as exc:
            raise IntegrationFailure(f"non-finite Hamiltonian flow ({exc.what})", t) from exc
        return np.concatenate([b.psi, -(p @ b.dpsi_dq - b.dL_dq)])

    states = np.empty((grid.size, 2 * n))
    controls = np.empty((grid.size, sys.r))
    states[0] = y
    controls[0] = red.solve(t0, y[:n], y[n:])
    for k in range(steps):
        states[k + 1] = rk4_step(rhs, float(grid[k]), states[k], h)
        if not np.all(np.isfinite(states[k + 1])):
            raise IntegrationFailure("non-finite Hamiltonian state", float(grid[k + 1]))
        controls[k + 1] = red.solve(float(grid[k + 1]), states[k + 1, :n], states[k + 1, n:])
    return HamiltonianTrajectory(sys, grid, states[:, :n], states[:, n:], controls)


# ── Multiple shooting ───────────────────────────────


@dataclass(frozen=True)
class ShootingSeeds:
    p0: tuple[float, ...]
    corner_times: tuple[float, ...] = ()
    z: tuple[tuple[float, ...], ...] = ()


@dataclass(frozen=True, eq=False)
class _Layout:
    n: int
    corners: int

    def split(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        n, c = self.n, self.corners
        restarts = [u[n + c + s * n: n + c + (s + 1) * n] for s in range(c)]
        return u[:n], u[n:n + c], restarts


def _shoot_segments(
    sys: ControlSystem,
    u: np.ndarray,
    layout: _Layout,
    q_start: np.ndarray,
    t_span: tuple[float, float],
    z_seeds: Sequence[np.ndarray],
    steps: Sequence[int],
) -> list[HamiltonianTrajectory]:
    p_start, corners, restarts = layout.split(u)
    bounds = [t_span[0], *corners, t_span[1]]
    if any(b - a <= settings.min_arc_length for a, b in zip(bounds, bounds[1:])):
        raise ValidationError("corner times left their interval or crossed")
    segments = []
    q, p = q_start, p_start
    for s, (a, b) in enumerate(zip(bounds, bounds[1:])):
        if s > 0:
            p = restarts[s - 1]
        trajectory = integrate_hamilton(ReducedHamiltonian(sys, z_seeds[s]), q, p, (a, b), steps=steps[s])
        segments.append(trajectory)
        q, p = trajectory.q[-1], trajectory.p[-1]
    return segments


def _shooting_residual(
    sys: ControlSystem, segments: Sequence[HamiltonianTrajectory], q_end: np.ndarray
) -> np.ndarray:
    parts = [segments[-1].q[-1] - q_end]
    for left, right in zip(segments, segments[1:]):
        t = float(right.grid[0])
        h_left = pontryagin_H(sys, t, left.q[-1], left.z[-1], left.p[-1]).H
        h_right = pontryagin_H(sys, t, right.q[0], right.z[0], right.p[0]).H
        parts.append(right.p[0] - left.p[-1])
        parts.append(np.array([h_right - h_left]))
    return np.concatenate(parts)


def _assemble(sys: ControlSystem, segments: Sequence[HamiltonianTrajectory]) -> ExtremalCandidate:
    arcs = [Arc(float(s.grid[0]), float(s.grid[-1]), s.grid, s.q, s.z) for s in segments]
    curve = PiecewiseCurve(tuple(arcs))
    return candidate(sys, curve, [s.p for s in segments])


def shoot_extremal(
    sys: ControlSystem,
    q_start: Sequence[float],
    q_end: Sequence[float],
    t_span: tuple[float, float],
    n_corners: int = 0,
    seeds: ShootingSeeds | None = None,
    grid_density: float | None = None,
    tol: float | None = None,
    svd_tol: float | None = None,
    on_progress: Callable[[int, float], None] | None = None,
) -> ExtremalCandidate:
    """Fixed-endpoint broken extremal by damped multiple shooting.

    Unknowns are the initial momentum p(t0), the corner times and the momenta
    restarted after each corner, so there are n + k + k n of them for k
    corners; q is carried continuously through the corners. Residuals are
    the endpoint mismatch q(t1) - q_end and the jumps of p and H at each
    corner, as many as there are unknowns. The z seeds are not unknowns: they
    only select the branch of z* followed on each segment.

    Each iteration solves the finite-difference Jacobian system in the least
    squares sense and halves the step until the squared residual decreases
    (at most ``line_search_halvings`` times). Iteration stops once the
    sup-norm of the residual vector drops to ``tol``, an absolute threshold;
    only the inner solve for z* scales its threshold with |p|. The converged
    curve is then passed to :func:`abnormality_index` with ``svd_tol``.
    """
    tol = settings.shoot_tol if tol is None else tol
    n = sys.n
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValidationError(f"shooting needs t1 > t0, got [{t0}, {t1}]")
    q_a = np.asarray(q_start, dtype=float)
    q_b = np.asarray(q_end, dtype=float)
    if q_a.shape != (n,) or q_b.shape != (n,):
        raise ValidationError(f"boundary values must have length {n}")

    seeds = seeds or ShootingSeeds(tuple(np.zeros(n)))
    p_seed = np.asarray(seeds.p0, dtype=float)
    if p_seed.shape != (n,):
        raise ValidationError(f"p0 seed must have length {n}")
    corner_seed = (
        np.asarray(seeds.corner_times, dtype=float)
        if seeds.corner_times
        else t0 + (t1 - t0) * np.arange(1, n_corners + 1) / (n_corners + 1)
    )
    if corner_seed.shape != (n_corners,):
        raise ValidationError(f"{len(corner_seed)} corner seeds for {n_corners} corners")
    z_seeds = [np.asarray(z, dtype=float) for z in seeds.z] or [np.zeros(sys.r)] * (n_corners + 1)
    if len(z_seeds) != n_corners + 1:
        raise ValidationError(f"{len(z_seeds)} z seeds for {n_corners + 1} segments")

    density = settings.steps_per_unit if grid_density is None else grid_density
    bounds = [t0, *corner_seed, t1]
    steps = [step_count(b - a, density) for a, b in zip(bounds, bounds[1:])]
    layout = _Layout(n, n_corners)
    u = np.concatenate([p_seed, corner_seed, np.tile(p_seed, n_corners)])

    def evaluate(x: np.ndarray) -> tuple[list[HamiltonianTrajectory], np.ndarray]:
        segments = _shoot_segments(sys, x, layout, q_a, (t0, t1), z_seeds, steps)
        return segments, _shooting_residual(sys, segments, q_b)

    try:
        segments, residual = evaluate(u)
    except VarcalcError as exc:
        raise NoConvergence(f"{NO_CERTIFICATE}: seeds are not integrable ({exc})") from exc

    jacobian = None
    for iteration in range(settings.shoot_max_iter + 1):
        norm = float(np.max(np.abs(residual)))
        logger.debug("Shooting iteration %d: |F| = %.3e", iteration, norm)
        if on_progress is not None:
            on_progress(iteration, norm)
        if norm <= tol:
            break
        if iteration == settings.shoot_max_iter:
            raise NoConvergence(
                f"{NO_CERTIFICATE}: {settings.shoot_max_iter} iterations, |F| = {norm:.3e}",
                best=_assemble(sys, segments),
                residual=norm,
            )

        try:
            jacobian = _fd_jacobian(evaluate, u, residual)
        except VarcalcError as exc:
            raise NoConvergence(
                f"{NO_CERTIFICATE}: Jacobian unavailable ({exc})", best=_assemble(sys, segments), residual=norm
            ) from exc
        step = np.linalg.lstsq(jacobian, -residual, rcond=None)[0]
        merit = float(residual @ residual)
        scale = 1.0
        for _ in range(settings.line_search_halvings + 1):
            trial = u + scale * step
            try:
                trial_segments, trial_residual = evaluate(trial)
            except (VarcalcError, np.linalg.LinAlgError):
                scale *= 0.5
                continue
            if float(trial_residual @ trial_residual) < (1.0 - 1e-4 * scale) * merit:
                u, segments, residual = trial, trial_segments, trial_residual
                break
            scale *= 0.5
        else:
            raise NoConvergence(
                f"{NO_CERTIFICATE}: line search stalled at |F| = {norm:.3e}",
                best=_assemble(sys, segments),
                residual=norm,
            )

    result = _assemble(sys, segments)
    notes: list[str] = []
    report = abnormality_index(sys, result.curve, tol=svd_tol, window_grid=(t0, t1))
    if not report.normal:
        notes.append(f"solution curve is abnormal (index {report.index}): momenta are not unique")
        logger.warning("Shooting converged on an abnormal curve (index %d)", report.index)
    if jacobian is not None and np.linalg.matrix_rank(jacobian, tol=1e-8 * max(1.0, np.abs(jacobian).max())) < u.size:
        notes.append("shooting Jacobian is rank-deficient: this root is not isolated, other solutions exist")
    logger.info(
        "Shooting converged in %d iterations, max residual %.2e", iteration, result.residuals.max_residual  # type: ignore[union-attr]
    )
    return replace(result, abnormality=report, notes=tuple(notes))


def _fd_jacobian(
    evaluate: Callable[[np.ndarray], tuple[Any, np.ndarray]], u: np.ndarray, residual: np.ndarray
) -> np.ndarray:
    jacobian = np.empty((residual.size, u.size))
    for j in range(u.size):
        delta = settings.shoot_fd_step * max(1.0, abs(float(u[j])))
        bumped = u.copy()
        bumped[j] += delta
        try:
            column = (evaluate(bumped)[1] - residual) / delta
        except VarcalcError:
            bumped[j] = u[j] - delta
            column = (residual - evaluate(bumped)[1]) / delta
        jacobian[:, j] = column
    return jacobian


# ── Gauge transformations and the null functional ───


def gauge_transform(
    sys: ControlSystem, cand: ExtremalCandidate, f: Expression | str
) -> tuple[ControlSystem, ExtremalCandidate]:
    """L' = L + df/dt + df/dq_k psi^k and p' = p + df/dq; the curve is reused as is."""
    f_expr = parse(f, sys.params) if isinstance(f, str) else f
    stray = sorted(free_symbols(f_expr)[0] - {"t", *sys.state_names})
    if stray:
        raise ValidationError(f"gauge function may only depend on t and the states, found {stray}")

    lagrangian = add(sys.lagrangian, differentiate(f_expr, "t"))
    gradient = [differentiate(f_expr, s) for s in sys.state_names]
    for df, psi in zip(gradient, sys.psi):
        lagrangian = add(lagrangian, mul(df, psi))
    gauged = sys.with_lagrangian(lagrangian)

    shift_fns = [compile_expression(df) for df in gradient]
    momenta = []
    for arc, p in zip(cand.curve.arcs, cand.momenta.arcs):
        env = sys.variables(arc.grid, arc.q, arc.z)
        with np.errstate(all="ignore"):
            shift = np.stack([np.broadcast_to(fn(env, sys.params), arc.grid.shape) for fn in shift_fns], axis=-1)
        momenta.append(p + shift)
    path = _with_p0(gauged, cand.curve, momenta)
    return gauged, ExtremalCandidate(
        cand.curve, path, extremal_residuals(gauged, cand.curve, path), cand.abnormality, cand.notes
    )


@dataclass(frozen=True, eq=False)
class I0Result:
    momenta: tuple[CovectorPath, ...]   # trivial solution first
    dimension: int

    @property
    def normal(self) -> bool:
        return self.dimension == 0


def i0_extremals(sys: ControlSystem, curve: PiecewiseCurve, tol: float | None = None) -> I0Result:
    """Extremals of the null functional projecting onto the curve.

    Any set of extremal momenta for the curve is an affine space over the
    nontrivial elements returned here.
    """
    basis = annihilator(sys, curve, tol)
    velocity = [arc.velocity(sys) for arc in curve.arcs]

    def with_p0(arcs: Sequence[np.ndarray]) -> CovectorPath:
        return CovectorPath(tuple(arcs), tuple(-np.einsum("gi,gi->g", p, v) for p, v in zip(arcs, velocity)))

    trivial = with_p0([np.zeros((arc.grid.size, curve.n)) for arc in curve.arcs])
    return I0Result((trivial, *(with_p0(e.arcs) for e in basis.elements)), basis.dimension)


# ── Action and its variations ───────────────────────


def action_integral(sys: ControlSystem, curve: PiecewiseCurve) -> float:
    return float(sum(integrate(sys.evaluate_lagrangian(arc.grid, arc.q, arc.z), arc.grid) for arc in curve.arcs))


def first_variation(
    sys: ControlSystem, cand: ExtremalCandidate, datum: DeformationDatum
) -> float:
    """Derivative of the action along the deformation generated by ``datum`` (h = 0).

    Written in terms of the momenta: the arc integrals of
    (dL/dq - p dpsi/dq - p') X + (dL/dz - p dpsi/dz) X^A, plus
    alpha_s [p psi - L] at the corners and the boundary terms p X.
    All of them except the boundary terms vanish on an extremal.
    """
    curve = cand.curve
    deformation = variational_integrate(sys, curve, None, datum)
    total = 0.0
    for s, (arc, p) in enumerate(zip(curve.arcs, cand.momenta.arcs)):
        b = sys.evaluate(arc.grid, arc.q, arc.z)
        x = deformation.components[s]
        lift = deformation.lift[s]
        along_x = b.dL_dq - np.einsum("gi,gik->gk", p, b.dpsi_dq) - derivative(p, arc.h)
        along_z = b.dL_dz - np.einsum("gi,gia->ga", p, b.dpsi_dz)
        integrand = np.einsum("gk,gk->g", along_x, x) + np.einsum("ga,ga->g", along_z, lift)
        total += float(integrate(integrand, arc.grid)) + float(p[-1] @ x[-1] - p[0] @ x[0])
    for s, (left, right) in enumerate(zip(curve.arcs, curve.arcs[1:])):
        t = right.t_start
        jump_L = float(
            sys.evaluate_lagrangian(t, right.q[0], right.z[0]) - sys.evaluate_lagrangian(t, left.q[-1], left.z[-1])
        )
        total -= float(datum.alphas[s]) * jump_L
    return total


@dataclass(frozen=True)
class StationarityReport:
    derivatives: tuple[float, ...]
    first_variations: tuple[float, ...]
    endpoint_defects: tuple[float, ...]

    @property
    def max_derivative(self) -> float:
        return max((abs(d) for d in self.derivatives), default=0.0)

    def passes(self, tol: float = 1e-5) -> bool:
        return self.max_derivative <= tol


def _smooth_field(rng: np.random.Generator, curve: PiecewiseCurve, modes: int) -> Callable[[Any], np.ndarray]:
    coefficients = rng.standard_normal((modes, curve.r))
    span = curve.t1 - curve.t0

    def field_at(t: Any) -> np.ndarray:
        phase = np.pi * (np.asarray(t, dtype=float) - curve.t0) / span
        basis = np.stack([np.cos(k * phase) for k in range(modes)], axis=-1)
        return basis @ coefficients

    return field_at


def _splines(curve: PiecewiseCurve, samples: Sequence[np.ndarray]) -> list[CubicHermiteSpline]:
    return [
        CubicHermiteSpline(arc.grid, values, derivative(values, arc.h), axis=0)
        for arc, values in zip(curve.arcs, samples)
    ]


def stationarity_check(
    sys: ControlSystem,
    cand: ExtremalCandidate,
    samples: int = 20,
    eps: float = 1e-4,
    seed: int = 0,
    modes: int = 3,
) -> StationarityReport:
    """Directional derivatives of the action along random fixed-endpoint deformations.

    Each deformation moves the controls by xi (V + sum nu_k W_k) and the corners
    by xi (alpha + sum nu_k beta_k), where W_k = (C dpsi/dz)_k and
    beta_k = -(C [psi])_k span the endpoint map's range. nu cancels the
    endpoint drift, first to linear order and then exactly on the
    finite curve by a chord iteration.
    """
    curve = cand.curve
    rng = np.random.default_rng(seed)
    frame = transport_frame(sys, curve)
    jumps = corner_jumps(sys, curve)
    n = curve.n
    t0, t1 = curve.t0, curve.t1

    correction = [
        np.einsum("gai,gir->gar", frame.coframes[s], sys.dpsi_dz(arc.grid, arc.q, arc.z))
        for s, arc in enumerate(curve.arcs)
    ]
    betas = np.array([-(frame.coframes[s][-1] @ jump.jump) for s, jump in enumerate(jumps)]).reshape(-1, n)
    columns = [
        endpoint_map(sys, curve, [w[:, k, :] for w in correction], betas[:, k], frame=frame) for k in range(n)
    ]
    upsilon = np.array(columns).T.reshape(n, n)
    chord = frame.frames[-1][-1].T @ upsilon
    correction_splines = _splines(curve, [np.ascontiguousarray(w.reshape(w.shape[0], -1)) for w in correction])
    base_controls = ControlPath.from_curve(sys, curve)
    steps = [arc.steps for arc in curve.arcs]
    q_start, q_end = curve.arcs[0].q[0], curve.q_end

    derivatives, variations, defects = [], [], []
    for _ in range(samples):
        field_fn = _smooth_field(rng, curve, modes)
        alphas = rng.standard_normal(len(jumps))
        drift = endpoint_map(sys, curve, [field_fn(arc.grid) for arc in curve.arcs], alphas, frame=frame)
        nu_linear = np.linalg.lstsq(upsilon, -drift, rcond=None)[0]

        def deformed(xi: float, nu: np.ndarray) -> PiecewiseCurve:
            weights = nu_linear + nu
            specs = []
            for s, spec in enumerate(base_controls.arcs):
                def control(t: Any, spec: Any = spec, spline: Any = correction_splines[s], w: np.ndarray = weights) -> np.ndarray:
                    corr = spline(t).reshape(np.shape(t) + (n, sys.r))
                    return spec(t) + xi * (field_fn(t) + np.einsum("...kr,k->...r", corr, w))
                specs.append(FunctionControl(control))
            moved = np.array(curve.corner_times) + xi * (alphas + betas @ weights)
            return integrate_admissible(
                sys, ControlPath(tuple(specs)), q_start, (t0, t1), moved, estimate_error=False, steps=steps
            )

        def fixed_endpoint_action(xi: float) -> tuple[float, float]:
            nu = np.zeros(n)
            moved = deformed(xi, nu)
            for _ in range(8):
                miss = moved.q_end - q_end
                if float(np.max(np.abs(miss))) <= 1e-14 * max(1.0, float(np.max(np.abs(q_end)))):
                    break
                nu = nu - np.linalg.lstsq(xi * chord, miss, rcond=None)[0]
                moved = deformed(xi, nu)
            return action_integral(sys, moved), float(np.max(np.abs(moved.q_end - q_end)))

        plus, defect_plus = fixed_endpoint_action(eps)
        minus, defect_minus = fixed_endpoint_action(-eps)
        derivatives.append((plus - minus) / (2.0 * eps))
        defects.append(max(defect_plus, defect_minus))

        u_samples = tuple(
            field_fn(arc.grid) + np.einsum("gkr,k->gr", w, nu_linear) for arc, w in zip(curve.arcs, correction)
        )
        datum = DeformationDatum(u_samples, alphas + betas @ nu_linear, np.zeros(n))
        variations.append(first_variation(sys, cand, datum))

    report = StationarityReport(tuple(derivatives), tuple(variations), tuple(defects))
    logger.info("Stationarity check: max |dI/dxi| = %.2e over %d deformations", report.max_derivative, samples)
    return report
