"""Control systems: the constraint embedding q' = psi(t, q, z) with its Lagrangian.

``ControlSystem`` is the intrinsic form (controls z parametrize the admissible
velocities), ``ExtrinsicProblem`` the extrinsic one (free Lagrangian plus
velocity constraints g(t, q, q') = 0). Both differentiate their expressions
symbolically once and evaluate the compiled derivatives either at a single
point or along a whole array of samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np

from .config import settings
from .errors import NonFinite, ValidationError
from .expr import (
    Compiled,
    Expression,
    Num,
    compile_expression,
    differentiate,
    free_symbols,
    mul,
    parse,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JacobianBundle:
    """Values and first partials at one point (or along a leading sample axis)."""

    psi: np.ndarray       # (..., n)
    dpsi_dq: np.ndarray   # (..., n, n), [i, k] = d psi^i / d q^k
    dpsi_dz: np.ndarray   # (..., n, r)
    dpsi_dt: np.ndarray   # (..., n)
    lagrangian: np.ndarray
    dL_dq: np.ndarray     # (..., n)
    dL_dz: np.ndarray     # (..., r)
    dL_dt: np.ndarray


@dataclass(frozen=True)
class RankCertificate:
    ok: bool
    singular_values: np.ndarray


@dataclass(frozen=True)
class _Table:
    """Compiled closures with the labels used in NonFinite reports."""

    closures: tuple[Compiled, ...]
    labels: tuple[str, ...]
    shape: tuple[int, ...]


def _table(exprs: Sequence[Expression], labels: Sequence[str], shape: tuple[int, ...]) -> _Table:
    return _Table(tuple(compile_expression(e) for e in exprs), tuple(labels), shape)


def _evaluate_table(
    table: _Table, variables: Mapping[str, Any], params: Mapping[str, Any], batch: tuple[int, ...]
) -> np.ndarray:
    flat = np.empty(batch + (len(table.closures),))
    for j, fn in enumerate(table.closures):
        flat[..., j] = fn(variables, params)
    if not np.all(np.isfinite(flat)):
        bad = np.argwhere(~np.isfinite(flat))[0]
        where = ""
        if batch and "t" in variables:
            where = f"t = {float(np.broadcast_to(variables['t'], batch)[tuple(bad[:-1])]):.6g}"
        raise NonFinite(table.labels[bad[-1]], where)
    return flat.reshape(batch + table.shape)


def _check_names(kind: str, names: Sequence[str]) -> None:
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate {kind} names: {list(names)}")
    if "t" in names:
        raise ValidationError(f"'t' is reserved for time and cannot be a {kind} name")


def _check_symbols(label: str, e: Expression, variables: set[str], params: Mapping[str, float]) -> None:
    used_vars, used_params = free_symbols(e)
    stray = sorted(used_vars - variables)
    if stray:
        raise ValidationError(f"{label} uses undeclared symbol(s) {', '.join(stray)}")
    missing = sorted(used_params - set(params))
    if missing:
        raise ValidationError(f"{label} uses unset parameter(s) {', '.join(missing)}")


class _CompiledSystem:
    def __init__(self, sys: ControlSystem) -> None:
        n, r = sys.n, sys.r
        q, z = sys.state_names, sys.control_names
        psi = sys.psi
        L = sys.lagrangian

        self.psi = _table(psi, [f"psi[{i}]" for i in range(n)], (n,))
        self.dpsi_dq = _table(
            [differentiate(psi[i], q[k]) for i in range(n) for k in range(n)],
            [f"d psi[{i}]/d {q[k]}" for i in range(n) for k in range(n)],
            (n, n),
        )
        self.dpsi_dz = _table(
            [differentiate(psi[i], z[a]) for i in range(n) for a in range(r)],
            [f"d psi[{i}]/d {z[a]}" for i in range(n) for a in range(r)],
            (n, r),
        )
        self.dpsi_dt = _table(
            [differentiate(psi[i], "t") for i in range(n)], [f"d psi[{i}]/d t" for i in range(n)], (n,)
        )
        self.L = _table([L], ["lagrangian"], ())
        self.dL_dq = _table([differentiate(L, s) for s in q], [f"d L/d {s}" for s in q], (n,))
        self.dL_dz = _table([differentiate(L, c) for c in z], [f"d L/d {c}" for c in z], (r,))
        self.dL_dt = _table([differentiate(L, "t")], ["d L/d t"], ())

        # upper triangle only; the Hessian is mirrored on assembly
        self.pairs = [(a, b) for a in range(r) for b in range(a, r)]
        dz = [[differentiate(psi[i], z[a]) for a in range(r)] for i in range(n)]
        self.d2psi_dz = _table(
            [differentiate(dz[i][a], z[b]) for i in range(n) for a, b in self.pairs],
            [f"d2 psi[{i}]/d {z[a]} d {z[b]}" for i in range(n) for a, b in self.pairs],
            (n, len(self.pairs)),
        )
        dLz = [differentiate(L, c) for c in z]
        self.d2L_dz = _table(
            [differentiate(dLz[a], z[b]) for a, b in self.pairs],
            [f"d2 L/d {z[a]} d {z[b]}" for a, b in self.pairs],
            (len(self.pairs),),
        )


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Intrinsic control system (n states, r controls, psi, Lagrangian, parameters)."""

    state_names: tuple[str, ...]
    control_names: tuple[str, ...]
    psi: tuple[Expression, ...]
    lagrangian: Expression
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "control_names", tuple(self.control_names))
        object.__setattr__(self, "psi", tuple(self.psi))
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        _check_names("state", self.state_names)
        _check_names("control", self.control_names)
        clash = set(self.state_names) & set(self.control_names)
        if clash:
            raise ValidationError(f"names used both as state and control: {sorted(clash)}")
        if len(self.psi) != self.n:
            raise ValidationError(f"psi count {len(self.psi)} ≠ n {self.n}")
        if self.r > self.n:
            raise ValidationError(f"r {self.r} > n {self.n}")
        allowed = {"t", *self.state_names, *self.control_names}
        for i, e in enumerate(self.psi):
            _check_symbols(f"psi[{i}]", e, allowed, self.params)
        _check_symbols("lagrangian", self.lagrangian, allowed, self.params)

    @classmethod
    def from_strings(
        cls,
        states: Sequence[str],
        controls: Sequence[str],
        psi: Sequence[str],
        lagrangian: str = "0",
        params: Mapping[str, float] | None = None,
        name: str = "",
    ) -> ControlSystem:
        params = dict(params or {})
        return cls(
            tuple(states),
            tuple(controls),
            tuple(parse(p, params) for p in psi),
            parse(lagrangian, params),
            params,
            name,
        )

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def r(self) -> int:
        return len(self.control_names)

    @cached_property
    def _compiled(self) -> _CompiledSystem:
        logger.debug("Compiling %d+1 expressions for system %s", self.n, self.name or "<anonymous>")
        return _CompiledSystem(self)

    def with_lagrangian(self, lagrangian: Expression) -> ControlSystem:
        return ControlSystem(
            self.state_names, self.control_names, self.psi, lagrangian, dict(self.params), self.name
        )

    def scaled(self, factor: float) -> ControlSystem:
        """Same system with psi multiplied by a constant."""
        psi = tuple(mul(Num(float(factor)), e) for e in self.psi)
        return ControlSystem(
            self.state_names, self.control_names, psi, self.lagrangian, dict(self.params), self.name
        )

    # ── Evaluation ──────────────────────────────────

    def variables(self, t: Any, q: np.ndarray, z: np.ndarray) -> dict[str, Any]:
        q = np.asarray(q, dtype=float)
        z = np.asarray(z, dtype=float)
        if q.shape[-1] != self.n or z.shape[-1] != self.r:
            raise ValidationError(
                f"point dimensions (|q| = {q.shape[-1]}, |z| = {z.shape[-1]}) "
                f"do not match (n = {self.n}, r = {self.r})"
            )
        env: dict[str, Any] = {"t": np.asarray(t, dtype=float)[()]}
        for i, s in enumerate(self.state_names):
            env[s] = q[..., i]
        for a, c in enumerate(self.control_names):
            env[c] = z[..., a]
        return env

    def _batch(self, t: Any, q: np.ndarray, z: np.ndarray) -> tuple[int, ...]:
        return np.broadcast_shapes(np.shape(t), np.shape(q)[:-1], np.shape(z)[:-1])

    def evaluate_psi(self, t: Any, q: np.ndarray, z: np.ndarray) -> np.ndarray:
        env = self.variables(t, q, z)
        with np.errstate(all="ignore"):
            return _evaluate_table(self._compiled.psi, env, self.params, self._batch(t, q, z))

    def evaluate_lagrangian(self, t: Any, q: np.ndarray, z: np.ndarray) -> np.ndarray:
        env = self.variables(t, q, z)
        with np.errstate(all="ignore"):
            return _evaluate_table(self._compiled.L, env, self.params, self._batch(t, q, z))

    def evaluate(self, t: Any, q: np.ndarray, z: np.ndarray) -> JacobianBundle:
        """Bundle at a point, or along samples when t/q/z carry a leading axis."""
        c = self._compiled
        env = self.variables(t, q, z)
        batch = self._batch(t, q, z)
        p = self.params
        with np.errstate(all="ignore"):
            return JacobianBundle(
                psi=_evaluate_table(c.psi, env, p, batch),
                dpsi_dq=_evaluate_table(c.dpsi_dq, env, p, batch),
                dpsi_dz=_evaluate_table(c.dpsi_dz, env, p, batch),
                dpsi_dt=_evaluate_table(c.dpsi_dt, env, p, batch),
                lagrangian=_evaluate_table(c.L, env, p, batch),
                dL_dq=_evaluate_table(c.dL_dq, env, p, batch),
                dL_dz=_evaluate_table(c.dL_dz, env, p, batch),
                dL_dt=_evaluate_table(c.dL_dt, env, p, batch),
            )

    def dpsi_dz(self, t: Any, q: np.ndarray, z: np.ndarray) -> np.ndarray:
        env = self.variables(t, q, z)
        with np.errstate(all="ignore"):
            return _evaluate_table(self._compiled.dpsi_dz, env, self.params, self._batch(t, q, z))

    def dpsi_dq(self, t: Any, q: np.ndarray, z: np.ndarray) -> np.ndarray:
        env = self.variables(t, q, z)
        with np.errstate(all="ignore"):
            return _evaluate_table(self._compiled.dpsi_dq, env, self.params, self._batch(t, q, z))

    def control_gradient(self, t: Any, q: np.ndarray, z: np.ndarray, p: np.ndarray) -> np.ndarray:
        """d(p.psi - L)/dz without evaluating the rest of the bundle."""
        env = self.variables(t, q, z)
        p = np.asarray(p, dtype=float)
        batch = np.broadcast_shapes(self._batch(t, q, z), p.shape[:-1])
        with np.errstate(all="ignore"):
            dz = _evaluate_table(self._compiled.dpsi_dz, env, self.params, batch)
            dL = _evaluate_table(self._compiled.dL_dz, env, self.params, batch)
        return np.einsum("...i,...ia->...a", p, dz) - dL

    def pontryagin_hessian(self, t: Any, q: np.ndarray, z: np.ndarray, p: np.ndarray) -> np.ndarray:
        """p_i d2psi^i/dz dz - d2L/dz dz, exactly symmetric."""
        c = self._compiled
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.n:
            raise ValidationError(f"momentum length {p.shape[-1]} ≠ n {self.n}")
        env = self.variables(t, q, z)
        batch = np.broadcast_shapes(self._batch(t, q, z), p.shape[:-1])
        with np.errstate(all="ignore"):
            d2psi = _evaluate_table(c.d2psi_dz, env, self.params, batch)
            d2L = _evaluate_table(c.d2L_dz, env, self.params, batch)
        upper = np.einsum("...i,...ij->...j", p, d2psi) - d2L
        hess = np.empty(batch + (self.r, self.r))
        for j, (a, b) in enumerate(c.pairs):
            hess[..., a, b] = upper[..., j]
            hess[..., b, a] = upper[..., j]
        return hess


def evaluate_point(sys: ControlSystem, t: float, q: Sequence[float], z: Sequence[float]) -> JacobianBundle:
    q_arr = np.asarray(q, dtype=float)
    z_arr = np.asarray(z, dtype=float)
    if q_arr.shape != (sys.n,) or z_arr.shape != (sys.r,):
        raise ValidationError(f"expected |q| = {sys.n}, |z| = {sys.r}")
    return sys.evaluate(float(t), q_arr, z_arr)


def check_rank(
    sys: ControlSystem, t: float, q: Sequence[float], z: Sequence[float], tol: float | None = None
) -> RankCertificate:
    """True iff d psi/d z has full column rank r at the point."""
    tol = settings.rank_tol if tol is None else tol
    jac = evaluate_point(sys, t, q, z).dpsi_dz
    if sys.r == 0:
        return RankCertificate(True, np.zeros(0))
    s = np.linalg.svd(jac, compute_uv=False)
    scale = s[0] if s[0] > 0.0 else 1.0
    ok = bool(s[sys.r - 1] > tol * scale)
    if not ok:
        logger.info("Rank deficiency at t=%g: singular values %s", t, s)
    return RankCertificate(ok, s)


def pontryagin_hessian(
    sys: ControlSystem, t: float, q: Sequence[float], z: Sequence[float], p: Sequence[float]
) -> np.ndarray:
    return sys.pontryagin_hessian(float(t), np.asarray(q, float), np.asarray(z, float), np.asarray(p, float))


# ── Extrinsic form ──────────────────────────────────


@dataclass(frozen=True)
class ExtrinsicBundle:
    lagrangian: np.ndarray
    dL_dqdot: np.ndarray   # (..., n)
    dL_dq: np.ndarray      # (..., n)
    g: np.ndarray          # (..., m)
    dg_dqdot: np.ndarray   # (..., m, n)
    dg_dq: np.ndarray      # (..., m, n)


class _CompiledExtrinsic:
    def __init__(self, ext: ExtrinsicProblem) -> None:
        n, m = ext.n, ext.m
        q, v = ext.state_names, ext.velocity_names
        L, g = ext.free_lagrangian, ext.constraints
        self.L = _table([L], ["free lagrangian"], ())
        self.dL_dqdot = _table([differentiate(L, s) for s in v], [f"d L/d {s}" for s in v], (n,))
        self.dL_dq = _table([differentiate(L, s) for s in q], [f"d L/d {s}" for s in q], (n,))
        self.g = _table(g, [f"g[{j}]" for j in range(m)], (m,))
        self.dg_dqdot = _table(
            [differentiate(g[j], v[k]) for j in range(m) for k in range(n)],
            [f"d g[{j}]/d {v[k]}" for j in range(m) for k in range(n)],
            (m, n),
        )
        self.dg_dq = _table(
            [differentiate(g[j], q[k]) for j in range(m) for k in range(n)],
            [f"d g[{j}]/d {q[k]}" for j in range(m) for k in range(n)],
            (m, n),
        )


@dataclass(frozen=True, eq=False)
class ExtrinsicProblem:
    """Free Lagrangian L(t, q, q') with m velocity constraints g(t, q, q') = 0."""

    state_names: tuple[str, ...]
    velocity_names: tuple[str, ...]
    free_lagrangian: Expression
    constraints: tuple[Expression, ...]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "state_names", tuple(self.state_names))
        object.__setattr__(self, "velocity_names", tuple(self.velocity_names))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "params", {k: float(v) for k, v in self.params.items()})
        _check_names("state", self.state_names)
        _check_names("velocity", self.velocity_names)
        if len(self.velocity_names) != self.n:
            raise ValidationError(f"velocity count {len(self.velocity_names)} ≠ n {self.n}")
        allowed = {"t", *self.state_names, *self.velocity_names}
        _check_symbols("free_lagrangian", self.free_lagrangian, allowed, self.params)
        for j, g in enumerate(self.constraints):
            _check_symbols(f"constraints[{j}]", g, allowed, self.params)

    @classmethod
    def from_strings(
        cls,
        states: Sequence[str],
        free_lagrangian: str,
        constraints: Sequence[str],
        params: Mapping[str, float] | None = None,
        velocities: Sequence[str] | None = None,
    ) -> ExtrinsicProblem:
        params = dict(params or {})
        velocities = tuple(velocities) if velocities else tuple(f"{s}_dot" for s in states)
        return cls(
            tuple(states),
            velocities,
            parse(free_lagrangian, params),
            tuple(parse(g, params) for g in constraints),
            params,
        )

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return len(self.constraints)

    @cached_property
    def _compiled(self) -> _CompiledExtrinsic:
        return _CompiledExtrinsic(self)

    def evaluate(self, t: Any, q: np.ndarray, qdot: np.ndarray) -> ExtrinsicBundle:
        q = np.asarray(q, dtype=float)
        qdot = np.asarray(qdot, dtype=float)
        env: dict[str, Any] = {"t": np.asarray(t, dtype=float)[()]}
        for i, (s, v) in enumerate(zip(self.state_names, self.velocity_names)):
            env[s] = q[..., i]
            env[v] = qdot[..., i]
        batch = np.broadcast_shapes(np.shape(t), q.shape[:-1], qdot.shape[:-1])
        c, p = self._compiled, self.params
        with np.errstate(all="ignore"):
            return ExtrinsicBundle(
                lagrangian=_evaluate_table(c.L, env, p, batch),
                dL_dqdot=_evaluate_table(c.dL_dqdot, env, p, batch),
                dL_dq=_evaluate_table(c.dL_dq, env, p, batch),
                g=_evaluate_table(c.g, env, p, batch),
                dg_dqdot=_evaluate_table(c.dg_dqdot, env, p, batch),
                dg_dq=_evaluate_table(c.dg_dq, env, p, batch),
            )
