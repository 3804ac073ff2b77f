"""Lagrange multipliers of an intrinsic extremal and the extrinsic Euler-Lagrange check.

With L^ = L_free + lambda^s g_s, an intrinsic extremal (curve, p) lifts to
the extrinsic one through p_i = dL_free/dq'^i + lambda^s dg_s/dq'^i, solved
pointwise for lambda by least squares. The residual of that solve tells a
genuine extremal apart from an inconsistent candidate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import settings
from .curve import PiecewiseCurve
from .errors import Inconsistent, RankDeficient, ValidationError
from .extremal import ExtremalCandidate
from .numerics import derivative
from .system import ControlSystem, ExtrinsicProblem

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MultiplierPath:
    arcs: tuple[np.ndarray, ...]   # per arc (M+1, m)
    residual: float

    @property
    def m(self) -> int:
        return self.arcs[0].shape[1]

    def corner_jumps(self) -> np.ndarray:
        return np.array(
            [float(np.max(np.abs(b[0] - a[-1]), initial=0.0)) for a, b in zip(self.arcs, self.arcs[1:])]
        )


@dataclass(frozen=True)
class CorrespondenceReport:
    euler_lagrange: float
    constraint: float
    momentum_defect: float
    corner_momentum: float
    corner_energy: float
    multiplier_jumps: float

    @property
    def max_residual(self) -> float:
        return max(self.euler_lagrange, self.constraint, self.momentum_defect, self.corner_momentum, self.corner_energy)

    def passes(self, tol: float | None = None) -> bool:
        tol = settings.acceptance_tol if tol is None else tol
        return self.max_residual <= tol

    def to_dict(self) -> dict[str, float]:
        return {
            "euler_lagrange": self.euler_lagrange,
            "constraint": self.constraint,
            "momentum_defect": self.momentum_defect,
            "corner_momentum": self.corner_momentum,
            "corner_energy": self.corner_energy,
            "multiplier_jumps": self.multiplier_jumps,
            "max_residual": self.max_residual,
        }


@dataclass(frozen=True)
class EmbeddingReport:
    constraint: float      # max |g(t, q, psi)|
    tangency: float        # max |dg/dq' dpsi/dz|
    lagrangian: float      # max |L_free(t, q, psi) - L(t, q, z)|

    def passes(self, tol: float | None = None) -> bool:
        tol = settings.admissibility_tol if tol is None else tol
        return max(self.constraint, self.tangency, self.lagrangian) <= tol


def _check_dimensions(ext: ExtrinsicProblem, sys: ControlSystem) -> None:
    if ext.n != sys.n:
        raise ValidationError(f"extrinsic problem has {ext.n} states, the control system {sys.n}")
    if ext.m != sys.n - sys.r:
        raise ValidationError(f"extrinsic problem has {ext.m} constraints, expected n - r = {sys.n - sys.r}")


def recover_multipliers(
    ext: ExtrinsicProblem,
    sys: ControlSystem,
    cand: ExtremalCandidate,
    tol: float | None = None,
    admissibility_tol: float | None = None,
) -> MultiplierPath:
    tol = settings.acceptance_tol if tol is None else tol
    admissibility_tol = settings.admissibility_tol if admissibility_tol is None else admissibility_tol
    _check_dimensions(ext, sys)
    m = ext.m
    arcs, worst = [], 0.0
    for arc, p in zip(cand.curve.arcs, cand.momenta.arcs):
        qdot = arc.velocity(sys)
        b = ext.evaluate(arc.grid, arc.q, qdot)
        violation = float(np.max(np.abs(b.g), initial=0.0))
        if violation > admissibility_tol:
            raise Inconsistent(f"curve violates the extrinsic constraints (max |g| = {violation:.3e})", violation)
        if m:
            singular = np.linalg.svd(b.dg_dqdot, compute_uv=False)
            scale = np.maximum(singular[:, 0], 1e-300)
            lost = np.flatnonzero(singular[:, m - 1] <= settings.rank_tol * scale)
            if lost.size:
                t = float(arc.grid[lost[0]])
                raise RankDeficient(f"dg/dq' loses rank at t = {t:.6g}", t)
        rhs = p - b.dL_dqdot
        transposed = np.swapaxes(b.dg_dqdot, -1, -2)          # (G, n, m)
        lam = np.einsum("gmn,gn->gm", np.linalg.pinv(transposed), rhs) if m else np.zeros((arc.grid.size, 0))
        mismatch = np.einsum("gnm,gm->gn", transposed, lam) - rhs if m else -rhs
        worst = max(worst, float(np.max(np.abs(mismatch), initial=0.0)))
        arcs.append(lam)

    path = MultiplierPath(tuple(arcs), worst)
    if worst > tol:
        raise Inconsistent(f"multiplier system is inconsistent (residual {worst:.3e})", worst, path)
    jumps = path.corner_jumps()
    if jumps.size and float(jumps.max()) > tol:
        logger.warning("Recovered multipliers jump by %.2e at a corner", float(jumps.max()))
    logger.info("Recovered %d multiplier(s), residual %.2e", m, worst)
    return path


def verify_correspondence(
    ext: ExtrinsicProblem, sys: ControlSystem, cand: ExtremalCandidate, lam: MultiplierPath
) -> CorrespondenceReport:
    """Extrinsic Euler-Lagrange residuals for L^ = L_free + lambda g along the lifted curve."""
    _check_dimensions(ext, sys)
    el = constraint = defect = 0.0
    ends: list[tuple[np.ndarray, float, np.ndarray, float]] = []
    for arc, p, lam_arc in zip(cand.curve.arcs, cand.momenta.arcs, lam.arcs):
        qdot = arc.velocity(sys)
        b = ext.evaluate(arc.grid, arc.q, qdot)
        dL_dqdot = b.dL_dqdot + np.einsum("gm,gmn->gn", lam_arc, b.dg_dqdot)
        dL_dq = b.dL_dq + np.einsum("gm,gmn->gn", lam_arc, b.dg_dq)
        lagrangian = b.lagrangian + np.einsum("gm,gm->g", lam_arc, b.g)
        energy = np.einsum("gn,gn->g", qdot, dL_dqdot) - lagrangian
        el = max(el, float(np.max(np.abs(derivative(dL_dqdot, arc.h) - dL_dq))))
        constraint = max(constraint, float(np.max(np.abs(b.g), initial=0.0)))
        defect = max(defect, float(np.max(np.abs(dL_dqdot - p))))
        ends.append((dL_dqdot[0], float(energy[0]), dL_dqdot[-1], float(energy[-1])))

    corner_momentum = corner_energy = 0.0
    for left, right in zip(ends, ends[1:]):
        corner_momentum = max(corner_momentum, float(np.max(np.abs(right[0] - left[2]))))
        corner_energy = max(corner_energy, abs(right[1] - left[3]))
    jumps = lam.corner_jumps()
    return CorrespondenceReport(
        euler_lagrange=el,
        constraint=constraint,
        momentum_defect=defect,
        corner_momentum=corner_momentum,
        corner_energy=corner_energy,
        multiplier_jumps=float(jumps.max()) if jumps.size else 0.0,
    )


def check_embedding(ext: ExtrinsicProblem, sys: ControlSystem, curve: PiecewiseCurve) -> EmbeddingReport:
    """Whether psi parametrizes the extrinsic constraint set along the curve."""
    _check_dimensions(ext, sys)
    constraint = tangency = lagrangian = 0.0
    for arc in curve.arcs:
        bundle = sys.evaluate(arc.grid, arc.q, arc.z)
        b = ext.evaluate(arc.grid, arc.q, bundle.psi)
        constraint = max(constraint, float(np.max(np.abs(b.g), initial=0.0)))
        tangent = np.einsum("gmn,gnr->gmr", b.dg_dqdot, bundle.dpsi_dz)
        tangency = max(tangency, float(np.max(np.abs(tangent), initial=0.0)))
        lagrangian = max(lagrangian, float(np.max(np.abs(b.lagrangian - bundle.lagrangian))))
    return EmbeddingReport(constraint, tangency, lagrangian)
