"""h-transport of frames along a curve and the covariant variational equation.

Conventions (all arrays carry a leading grid axis per arc):

- ``K[i, k] = d psi^i/d q^k + d psi^i/d z^A h_k^A`` is the transport generator.
- Frame rows are the transported vectors: ``E[a, i] = e_a^i`` with
  ``dE/dt = E K^T`` and ``E(t0) = I``; components are copied across corners.
- Coframe rows are the dual covectors: ``C = inv(E^T)`` so ``C E^T = I``;
  it satisfies ``dC/dt = -C K``, which is only used as a residual check.
- Temporal connection ``tau[i, j] = -K[j, i]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import settings
from .curve import Arc, PiecewiseCurve, corner_jumps
from .errors import SingularFrame, ValidationError
from .numerics import cumulative_integral, derivative
from .system import ControlSystem

logger = logging.getLogger(__name__)


# ── Infinitesimal controls ──────────────────────────


@dataclass(frozen=True, eq=False)
class InfinitesimalControl:
    """Per-arc samples of h_i^A(t), stored as arrays of shape (M+1, r, n)."""

    arcs: tuple[np.ndarray, ...]

    @classmethod
    def zero(cls, curve: PiecewiseCurve) -> InfinitesimalControl:
        return cls(tuple(np.zeros((arc.grid.size, curve.r, curve.n)) for arc in curve.arcs))

    @classmethod
    def constant(cls, curve: PiecewiseCurve, matrix: Sequence[Sequence[float]]) -> InfinitesimalControl:
        h = np.asarray(matrix, dtype=float).reshape(curve.r, curve.n)
        return cls(tuple(np.broadcast_to(h, (arc.grid.size, curve.r, curve.n)).copy() for arc in curve.arcs))

    @classmethod
    def from_function(
        cls, curve: PiecewiseCurve, fn: Callable[[float], np.ndarray]
    ) -> InfinitesimalControl:
        return cls(
            tuple(
                np.array([np.reshape(fn(float(t)), (curve.r, curve.n)) for t in arc.grid], dtype=float)
                for arc in curve.arcs
            )
        )

    def check(self, curve: PiecewiseCurve) -> None:
        if len(self.arcs) != len(curve.arcs):
            raise ValidationError(f"infinitesimal control has {len(self.arcs)} arcs, curve has {len(curve.arcs)}")
        for s, (h, arc) in enumerate(zip(self.arcs, curve.arcs)):
            if h.shape != (arc.grid.size, curve.r, curve.n):
                raise ValidationError(f"infinitesimal control arc {s} has shape {h.shape}")
            if not np.all(np.isfinite(h)):
                raise ValidationError(f"infinitesimal control arc {s} has non-finite samples")


# ── Frames ──────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class TransportedFrame:
    frames: tuple[np.ndarray, ...]      # per arc (M+1, n, n), rows e_a
    coframes: tuple[np.ndarray, ...]    # per arc (M+1, n, n), rows e^a
    generators: tuple[np.ndarray, ...]  # per arc (M+1, n, n), K
    duality_defect: float
    coframe_residual: float


def _generators(
    sys: ControlSystem, arc: Arc, h: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    bundle = sys.evaluate(arc.grid, arc.q, arc.z)
    nodes = bundle.dpsi_dq + bundle.dpsi_dz @ h
    t_mid, q_mid, z_mid = arc.midpoints(sys)
    h_mid = 0.5 * (h[:-1] + h[1:])
    mids = sys.dpsi_dq(t_mid, q_mid, z_mid) + sys.dpsi_dz(t_mid, q_mid, z_mid) @ h_mid
    return nodes, mids


def _propagate(start: np.ndarray, nodes: np.ndarray, mids: np.ndarray, step: float) -> np.ndarray:
    """RK4 for dE/dt = E K^T with K sampled at nodes and midpoints."""
    out = np.empty(nodes.shape)
    out[0] = start
    half = 0.5 * step
    for k in range(nodes.shape[0] - 1):
        e = out[k]
        k_mid = mids[k].T
        s1 = e @ nodes[k].T
        s2 = (e + half * s1) @ k_mid
        s3 = (e + half * s2) @ k_mid
        s4 = (e + step * s3) @ nodes[k + 1].T
        out[k + 1] = e + (step / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
    return out


def propagate_adjoint(sys: ControlSystem, curve: PiecewiseCurve) -> tuple[np.ndarray, ...]:
    """Fundamental matrices Phi(t) of d rho/dt = -(d psi/d q)^T rho, Phi(t0) = I.

    Same propagation as the h = 0 frame: Phi = C^T without the inversion.
    """
    h0 = InfinitesimalControl.zero(curve)
    result = []
    start = np.eye(curve.n)
    for arc, h in zip(curve.arcs, h0.arcs):
        nodes, mids = _generators(sys, arc, h)
        # rows of Phi^T evolve by Phi^T' = -Phi^T K, the transpose of E' = E K^T with K -> -K^T
        phi_t = _propagate(start, -np.swapaxes(nodes, -1, -2), -np.swapaxes(mids, -1, -2), arc.h)
        phi = np.swapaxes(phi_t, -1, -2)
        result.append(phi)
        start = phi_t[-1]
    return tuple(result)


def transport_frame(
    sys: ControlSystem, curve: PiecewiseCurve, h: InfinitesimalControl | None = None
) -> TransportedFrame:
    h = h or InfinitesimalControl.zero(curve)
    h.check(curve)
    frames, coframes, generators = [], [], []
    start = np.eye(curve.n)
    defect = 0.0
    residual = 0.0
    identity = np.eye(curve.n)
    for arc, h_arc in zip(curve.arcs, h.arcs):
        nodes, mids = _generators(sys, arc, h_arc)
        frame = _propagate(start, nodes, mids, arc.h)
        condition = np.linalg.cond(frame)
        worst = int(np.argmax(condition))
        if not np.isfinite(condition[worst]) or condition[worst] > settings.max_frame_condition:
            raise SingularFrame(float(condition[worst]), float(arc.grid[worst]))
        coframe = np.linalg.inv(np.swapaxes(frame, -1, -2))
        defect = max(defect, float(np.max(np.abs(coframe @ np.swapaxes(frame, -1, -2) - identity))))
        residual = max(residual, float(np.max(np.abs(derivative(coframe, arc.h) + coframe @ nodes))))
        frames.append(frame)
        coframes.append(coframe)
        generators.append(nodes)
        start = frame[-1]
    if defect > settings.duality_tol:
        logger.warning("Frame duality defect %.2e above %.0e", defect, settings.duality_tol)
    return TransportedFrame(tuple(frames), tuple(coframes), tuple(generators), defect, residual)


# ── Temporal connection and absolute derivatives ────


@dataclass(frozen=True, eq=False)
class TemporalConnection:
    coefficients: tuple[np.ndarray, ...]  # per arc (M+1, n, n), tau[i, j]
    steps: tuple[float, ...]


def connection_coefficients(
    sys: ControlSystem, curve: PiecewiseCurve, h: InfinitesimalControl | None = None
) -> TemporalConnection:
    h = h or InfinitesimalControl.zero(curve)
    h.check(curve)
    taus = []
    for arc, h_arc in zip(curve.arcs, h.arcs):
        bundle = sys.evaluate(arc.grid, arc.q, arc.z)
        generator = bundle.dpsi_dq + bundle.dpsi_dz @ h_arc
        taus.append(-np.swapaxes(generator, -1, -2))
    return TemporalConnection(tuple(taus), tuple(arc.h for arc in curve.arcs))


def absolute_derivative_vector(
    connection: TemporalConnection, field: Sequence[np.ndarray]
) -> tuple[np.ndarray, ...]:
    """DX^j/Dt = dX^j/dt + X^i tau_i^j per arc."""
    return tuple(
        derivative(x, step) + np.einsum("gi,gij->gj", x, tau)
        for x, tau, step in zip(field, connection.coefficients, connection.steps)
    )


def absolute_derivative_covector(
    connection: TemporalConnection, field: Sequence[np.ndarray]
) -> tuple[np.ndarray, ...]:
    """D rho_i/Dt = d rho_i/dt - tau_i^j rho_j per arc."""
    return tuple(
        derivative(rho, step) - np.einsum("gij,gj->gi", tau, rho)
        for rho, tau, step in zip(field, connection.coefficients, connection.steps)
    )


# ── Variational integration ─────────────────────────


@dataclass(frozen=True, eq=False)
class DeformationDatum:
    """(U, alpha, X0): vertical field per arc (M+1, r), corner weights, initial value."""

    U: tuple[np.ndarray, ...]
    alphas: np.ndarray
    x0: np.ndarray

    @classmethod
    def zero(cls, curve: PiecewiseCurve) -> DeformationDatum:
        return cls(
            tuple(np.zeros((arc.grid.size, curve.r)) for arc in curve.arcs),
            np.zeros(len(curve.arcs) - 1),
            np.zeros(curve.n),
        )

    def check(self, curve: PiecewiseCurve) -> None:
        if len(self.U) != len(curve.arcs):
            raise ValidationError(f"datum has {len(self.U)} arcs, curve has {len(curve.arcs)}")
        for s, (u, arc) in enumerate(zip(self.U, curve.arcs)):
            if np.shape(u) != (arc.grid.size, curve.r):
                raise ValidationError(f"datum U on arc {s} has shape {np.shape(u)}")
        if np.shape(self.alphas) != (len(curve.arcs) - 1,):
            raise ValidationError(f"datum needs {len(curve.arcs) - 1} corner weights")
        if np.shape(self.x0) != (curve.n,):
            raise ValidationError(f"datum X0 must have length {curve.n}")


@dataclass(frozen=True, eq=False)
class Deformation:
    frame_components: tuple[np.ndarray, ...]  # X^a per arc (M+1, n)
    components: tuple[np.ndarray, ...]        # X^i per arc (M+1, n)
    lift: tuple[np.ndarray, ...]              # X^A = h X + U per arc (M+1, r)

    @property
    def final(self) -> np.ndarray:
        return self.components[-1][-1]


def variational_integrate(
    sys: ControlSystem,
    curve: PiecewiseCurve,
    h: InfinitesimalControl | None,
    datum: DeformationDatum,
    frame: TransportedFrame | None = None,
) -> Deformation:
    """X^a(t) = X^a(t0) + int e^a_i dpsi^i/dz^A U^A dt, jumping by -alpha_s e^a_i [psi^i] at corners."""
    h = h or InfinitesimalControl.zero(curve)
    datum.check(curve)
    frame = frame or transport_frame(sys, curve, h)
    jumps = corner_jumps(sys, curve)

    x_frame = frame.coframes[0][0] @ np.asarray(datum.x0, dtype=float)
    frame_parts, coord_parts, lifts = [], [], []
    for s, arc in enumerate(curve.arcs):
        coframe = frame.coframes[s]
        dz = sys.dpsi_dz(arc.grid, arc.q, arc.z)
        integrand = np.einsum("gai,gir,gr->ga", coframe, dz, np.asarray(datum.U[s], dtype=float))
        xa = x_frame + cumulative_integral(integrand, arc.grid)
        xi = np.einsum("ga,gai->gi", xa, frame.frames[s])
        frame_parts.append(xa)
        coord_parts.append(xi)
        lifts.append(np.einsum("gri,gi->gr", h.arcs[s], xi) + datum.U[s])
        if s < len(jumps):
            x_frame = xa[-1] - float(datum.alphas[s]) * (coframe[-1] @ jumps[s].jump)
    return Deformation(tuple(frame_parts), tuple(coord_parts), tuple(lifts))


def variational_residual(
    sys: ControlSystem, curve: PiecewiseCurve, deformation: Deformation
) -> float:
    """Sup-norm of dX/dt - dpsi/dq X - dpsi/dz X^A in coordinates."""
    worst = 0.0
    for arc, x, lift in zip(curve.arcs, deformation.components, deformation.lift):
        bundle = sys.evaluate(arc.grid, arc.q, arc.z)
        rhs = np.einsum("gik,gk->gi", bundle.dpsi_dq, x) + np.einsum("gia,ga->gi", bundle.dpsi_dz, lift)
        worst = max(worst, float(np.max(np.abs(derivative(x, arc.h) - rhs))))
    return worst


def regauge_datum(
    datum: DeformationDatum,
    deformation: Deformation,
    h_old: InfinitesimalControl,
    h_new: InfinitesimalControl,
) -> DeformationDatum:
    """Datum giving the same deformation under h_new: U' = U + (h_old - h_new) X."""
    shifted = tuple(
        np.asarray(u, dtype=float) + np.einsum("gri,gi->gr", old - new, x)
        for u, old, new, x in zip(datum.U, h_old.arcs, h_new.arcs, deformation.components)
    )
    return DeformationDatum(shifted, np.asarray(datum.alphas, dtype=float), np.asarray(datum.x0, dtype=float))


def endpoint_map(
    sys: ControlSystem,
    curve: PiecewiseCurve,
    U: Sequence[np.ndarray],
    alphas: Sequence[float],
    h: InfinitesimalControl | None = None,
    frame: TransportedFrame | None = None,
) -> np.ndarray:
    """X(t1) in frame components for X(t0) = 0; its kernel fixes both endpoints."""
    datum = DeformationDatum(tuple(U), np.asarray(alphas, dtype=float), np.zeros(curve.n))
    return variational_integrate(sys, curve, h, datum, frame).frame_components[-1][-1]
