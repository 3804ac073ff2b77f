"""Admissible piecewise-differentiable evolutions.

An evolution is a sequence of closed arcs sampled on uniform grids (even
step counts), glued at corner times where q is continuous and z may jump.
Curves are built by integrating q' = psi(t, q, z(t)) with RK4 on the arc
grid, or imported from samples and checked with ``admissibility_residual``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .config import settings
from .errors import IntegrationFailure, NonFinite, ValidationError
from .expr import Expression, compile_expression, free_symbols, parse
from .numerics import derivative, rk4_step, step_count, uniform_grid
from .system import ControlSystem

logger = logging.getLogger(__name__)


def _frozen(array: Any, ndim: int) -> np.ndarray:
    out = np.array(array, dtype=float)
    if ndim == 2 and out.ndim == 1:
        out = out.reshape(-1, 1) if out.size else out.reshape(-1, 0)
    out.setflags(write=False)
    return out


# ── Arcs and curves ─────────────────────────────────


@dataclass(frozen=True, eq=False)
class Arc:
    t_start: float
    t_end: float
    grid: np.ndarray   # (M+1,)
    q: np.ndarray      # (M+1, n)
    z: np.ndarray      # (M+1, r)
    error_estimate: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "grid", _frozen(self.grid, 1))
        object.__setattr__(self, "q", _frozen(self.q, 2))
        object.__setattr__(self, "z", _frozen(self.z, 2))

        if self.t_end - self.t_start < settings.min_arc_length:
            raise ValidationError(f"degenerate arc [{self.t_start}, {self.t_end}]")
        grid = self.grid
        if grid.ndim != 1 or grid.size < 5:
            raise ValidationError("arc grid needs at least 5 samples")
        if grid[0] != self.t_start or grid[-1] != self.t_end:
            raise ValidationError("arc grid endpoints must equal t_start and t_end exactly")
        steps = np.diff(grid)
        if np.any(steps <= 0.0):
            raise ValidationError("arc grid must be strictly increasing")
        if (grid.size - 1) % 2:
            raise ValidationError(f"arc grid needs an even step count, got {grid.size - 1}")
        if np.max(np.abs(steps - self.h)) > 1e-8 * max(1.0, self.h):
            raise ValidationError("arc grid must be uniform")
        if self.q.shape[0] != grid.size or self.z.shape[0] != grid.size:
            raise ValidationError("sample count does not match the arc grid")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.z))):
            raise ValidationError("arc samples must be finite")

    @property
    def steps(self) -> int:
        return self.grid.size - 1

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.steps

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def r(self) -> int:
        return self.z.shape[1]

    def velocity(self, sys: ControlSystem) -> np.ndarray:
        return sys.evaluate_psi(self.grid, self.q, self.z)

    def interpolant(self, sys: ControlSystem) -> Callable[[Any], tuple[np.ndarray, np.ndarray]]:
        """Cubic Hermite (q, z) for off-grid times; q slopes from psi, z slopes differenced."""
        q_spline = CubicHermiteSpline(self.grid, self.q, self.velocity(sys), axis=0)
        z_spline = CubicHermiteSpline(self.grid, self.z, derivative(self.z, self.h), axis=0)
        return lambda t: (q_spline(t), z_spline(t))

    def midpoints(self, sys: ControlSystem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t_mid = 0.5 * (self.grid[:-1] + self.grid[1:])
        q_mid, z_mid = self.interpolant(sys)(t_mid)
        return t_mid, q_mid, z_mid


@dataclass(frozen=True, eq=False)
class PiecewiseCurve:
    arcs: tuple[Arc, ...]
    continuity_tol: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "arcs", tuple(self.arcs))
        if not self.arcs:
            raise ValidationError("a curve needs at least one arc")
        tol = settings.continuity_tol if self.continuity_tol is None else self.continuity_tol
        n, r = self.arcs[0].n, self.arcs[0].r
        for s, arc in enumerate(self.arcs):
            if arc.n != n or arc.r != r:
                raise ValidationError(f"arc {s} has dimensions ({arc.n}, {arc.r}), expected ({n}, {r})")
        for s, (left, right) in enumerate(zip(self.arcs, self.arcs[1:])):
            if left.t_end != right.t_start:
                raise ValidationError(f"arcs {s} and {s + 1} do not abut ({left.t_end} vs {right.t_start})")
            gap = float(np.max(np.abs(left.q[-1] - right.q[0]))) if n else 0.0
            if gap > tol:
                raise ValidationError(f"q is discontinuous at corner {s + 1} (gap {gap:.3e})")

    @property
    def n(self) -> int:
        return self.arcs[0].n

    @property
    def r(self) -> int:
        return self.arcs[0].r

    @property
    def t0(self) -> float:
        return self.arcs[0].t_start

    @property
    def t1(self) -> float:
        return self.arcs[-1].t_end

    @property
    def corner_times(self) -> tuple[float, ...]:
        return tuple(arc.t_end for arc in self.arcs[:-1])

    def arc_curve(self, s: int) -> PiecewiseCurve:
        """The single arc s as a curve of its own."""
        return PiecewiseCurve((self.arcs[s],), self.continuity_tol)

    @property
    def q_end(self) -> np.ndarray:
        return self.arcs[-1].q[-1]


@dataclass(frozen=True)
class JumpVector:
    corner: int        # 1-based, corner s sits between arcs s and s+1
    time: float
    jump: np.ndarray


@dataclass(frozen=True, eq=False)
class CovectorPath:
    """Per-arc covector samples p_i(t), optionally with p_0(t)."""

    arcs: tuple[np.ndarray, ...]
    p0: tuple[np.ndarray, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "arcs", tuple(_frozen(a, 2) for a in self.arcs))
        if self.p0 is not None:
            object.__setattr__(self, "p0", tuple(_frozen(a, 1) for a in self.p0))

    @property
    def initial(self) -> np.ndarray:
        return self.arcs[0][0]

    def corner_jumps(self) -> np.ndarray:
        """Sup-norm of [p] at each corner."""
        return np.array(
            [float(np.max(np.abs(b[0] - a[-1]), initial=0.0)) for a, b in zip(self.arcs, self.arcs[1:])]
        )

    def matches(self, curve: PiecewiseCurve) -> bool:
        return len(self.arcs) == len(curve.arcs) and all(
            p.shape == (arc.grid.size, curve.n) for p, arc in zip(self.arcs, curve.arcs)
        )


# ── Control paths ───────────────────────────────────


class ControlSpec(Protocol):
    def __call__(self, t: Any) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class ExpressionControl:
    """Controls z^A(t) given as expressions in t and parameters."""

    exprs: tuple[Expression, ...]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "exprs", tuple(self.exprs))
        for e in self.exprs:
            stray = sorted(free_symbols(e)[0] - {"t"})
            if stray:
                raise ValidationError(f"control expressions may only depend on t, found {stray}")
        object.__setattr__(self, "_fns", tuple(compile_expression(e) for e in self.exprs))

    def __call__(self, t: Any) -> np.ndarray:
        env = {"t": np.asarray(t, dtype=float)[()]}
        shape = np.shape(t)
        with np.errstate(all="ignore"):
            out = np.empty(shape + (len(self.exprs),))
            for a, fn in enumerate(self._fns):  # type: ignore[attr-defined]
                out[..., a] = fn(env, self.params)
        return out


@dataclass(frozen=True, eq=False)
class TabulatedControl:
    """Controls from a sample table, linearly interpolated, clamped outside."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t: Any) -> np.ndarray:
        values = np.asarray(self.values, dtype=float).reshape(len(self.times), -1)
        columns = [np.interp(t, self.times, values[:, a]) for a in range(values.shape[1])]
        return np.stack(columns, axis=-1) if columns else np.zeros(np.shape(t) + (0,))


@dataclass(frozen=True, eq=False)
class FunctionControl:
    fn: Callable[[Any], np.ndarray]

    def __call__(self, t: Any) -> np.ndarray:
        return np.asarray(self.fn(t), dtype=float)


@dataclass(frozen=True, eq=False)
class ControlPath:
    arcs: tuple[ControlSpec, ...]

    @classmethod
    def from_expressions(
        cls, per_arc: Sequence[Sequence[str]], params: Mapping[str, float] | None = None
    ) -> ControlPath:
        params = dict(params or {})
        return cls(
            tuple(ExpressionControl(tuple(parse(src, params) for src in arc), params) for arc in per_arc)
        )

    @classmethod
    def constant(cls, per_arc: Sequence[Sequence[float]]) -> ControlPath:
        specs = []
        for values in per_arc:
            frozen = np.array(values, dtype=float)
            specs.append(FunctionControl(lambda t, v=frozen: np.broadcast_to(v, np.shape(t) + v.shape).copy()))
        return cls(tuple(specs))

    @classmethod
    def from_curve(cls, sys: ControlSystem, curve: PiecewiseCurve) -> ControlPath:
        """Hermite-interpolated controls of an existing curve, extended beyond each arc."""
        specs = []
        for arc in curve.arcs:
            spline = CubicHermiteSpline(arc.grid, arc.z, derivative(arc.z, arc.h), axis=0)
            specs.append(FunctionControl(spline))
        return cls(tuple(specs))


# ── Operations ──────────────────────────────────────


def _integrate_arc(
    sys: ControlSystem, control: ControlSpec, start: np.ndarray, grid: np.ndarray
) -> np.ndarray:
    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        return sys.evaluate_psi(t, y, control(t))

    h = (grid[-1] - grid[0]) / (grid.size - 1)
    q = np.empty((grid.size, sys.n))
    q[0] = start
    for k in range(grid.size - 1):
        try:
            q[k + 1] = rk4_step(rhs, float(grid[k]), q[k], h)
        except NonFinite as exc:
            raise IntegrationFailure(f"non-finite velocity ({exc.what})", float(grid[k])) from exc
        if not np.all(np.isfinite(q[k + 1])):
            raise IntegrationFailure("non-finite state", float(grid[k + 1]))
    return q


def integrate_admissible(
    sys: ControlSystem,
    controls: ControlPath,
    q0: Sequence[float],
    t_span: tuple[float, float],
    corner_times: Sequence[float] = (),
    grid_density: float | None = None,
    estimate_error: bool = True,
    steps: Sequence[int] | None = None,
) -> PiecewiseCurve:
    """Integrate q' = psi(t, q, z(t)) arc by arc; each arc starts where the previous ended.

    ``steps`` fixes the per-arc step counts (used when corner times move
    during shooting, so the grids deform continuously).
    """
    density = settings.steps_per_unit if grid_density is None else grid_density
    t0, t1 = float(t_span[0]), float(t_span[1])
    bounds = [t0, *map(float, corner_times), t1]
    if any(b <= a for a, b in zip(bounds, bounds[1:])):
        raise ValidationError(f"corner times must increase strictly inside ({t0}, {t1})")
    if len(controls.arcs) != len(bounds) - 1:
        raise ValidationError(f"{len(controls.arcs)} control arcs for {len(bounds) - 1} curve arcs")
    start = np.asarray(q0, dtype=float)
    if start.shape != (sys.n,) or not np.all(np.isfinite(start)):
        raise ValidationError(f"q0 must be a finite vector of length {sys.n}")

    arcs = []
    for s, (a, b) in enumerate(zip(bounds, bounds[1:])):
        m = steps[s] if steps is not None else step_count(b - a, density)
        grid = uniform_grid(a, b, m)
        control = controls.arcs[s]
        q = _integrate_arc(sys, control, start, grid)
        error = 0.0
        if estimate_error:
            fine = _integrate_arc(sys, control, start, uniform_grid(a, b, 2 * m))
            error = float(np.max(np.abs(fine[-1] - q[-1]), initial=0.0)) / 15.0
        z = np.asarray(control(grid), dtype=float).reshape(grid.size, sys.r)
        arcs.append(Arc(a, b, grid, q, z, error))
        start = q[-1]
        logger.debug("Arc %d on [%g, %g]: %d steps, RK4 error estimate %.2e", s, a, b, m, error)

    return PiecewiseCurve(tuple(arcs))


def admissibility_residual(sys: ControlSystem, curve: PiecewiseCurve) -> float:
    """Sup-norm of (dq/dt differenced) - psi over every arc sample."""
    worst = 0.0
    for arc in curve.arcs:
        mismatch = derivative(arc.q, arc.h) - arc.velocity(sys)
        worst = max(worst, float(np.max(np.abs(mismatch), initial=0.0)))
    return worst


def corner_jumps(sys: ControlSystem, curve: PiecewiseCurve) -> list[JumpVector]:
    jumps = []
    for s, (left, right) in enumerate(zip(curve.arcs, curve.arcs[1:]), start=1):
        t = right.t_start
        q = right.q[0]
        after = sys.evaluate_psi(t, q, right.z[0])
        before = sys.evaluate_psi(t, q, left.z[-1])
        jumps.append(JumpVector(s, t, after - before))
    return jumps


def sample_curve(
    sys: ControlSystem,
    arcs: Sequence[tuple[float, float, Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]],
    grid_density: float | None = None,
) -> PiecewiseCurve:
    """Build a curve from closed-form q(t), z(t) per arc (no integration)."""
    density = settings.steps_per_unit if grid_density is None else grid_density
    built = []
    for a, b, q_fn, z_fn in arcs:
        grid = uniform_grid(a, b, step_count(b - a, density))
        q = np.asarray(q_fn(grid), dtype=float).reshape(grid.size, sys.n)
        z = np.asarray(z_fn(grid), dtype=float).reshape(grid.size, sys.r)
        built.append(Arc(a, b, grid, q, z))
    return PiecewiseCurve(tuple(built))
