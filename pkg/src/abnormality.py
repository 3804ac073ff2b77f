"""Abnormality index, annihilator basis, Gram matrix and local normality.

Every candidate annihilator element is rho(t) = Phi(t) rho0, with Phi the
fundamental matrix of the adjoint system. The conditions on rho become
linear rows in rho0:

- ``dpsi/dz(t_g)^T Phi(t_g)`` for each grid sample (r rows each);
- ``[psi]_s^T Phi(a_s)`` for each corner.

The null space of the stacked rows is the annihilator. The Gram matrix

    S = sum_g w_g R_g^T G R_g + sum_s alpha_s^2 c_s c_s^T

(R_g the grid rows, w_g the composite Simpson weights, c_s the corner rows)
is assembled on its own and its rank is read from the singular values of
S, so a metric, a corner weight or an ill-conditioned stack can make the
two counts disagree.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.linalg

from .config import settings
from .curve import CovectorPath, PiecewiseCurve, admissibility_residual, corner_jumps
from .errors import BadMetric, NotAdmissible, ValidationError
from .numerics import derivative, null_space, simpson_weights
from .system import ControlSystem
from .transport import propagate_adjoint

logger = logging.getLogger(__name__)


# ── Types ───────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class AnnihilatorBasis:
    elements: tuple[CovectorPath, ...]
    initial_values: np.ndarray     # (p, n), orthonormal rows
    singular_values: np.ndarray
    tol: float

    @property
    def dimension(self) -> int:
        return len(self.elements)

    def transport_residual(self, sys: ControlSystem, curve: PiecewiseCurve) -> float:
        """Sup-norm of d rho/dt + (dpsi/dq)^T rho over every element."""
        worst = 0.0
        for element in self.elements:
            for rho, arc in zip(element.arcs, curve.arcs):
                dq = sys.dpsi_dq(arc.grid, arc.q, arc.z)
                mismatch = derivative(rho, arc.h) + np.einsum("gki,gk->gi", dq, rho)
                worst = max(worst, float(np.max(np.abs(mismatch))))
        return worst

    def constraint_residual(self, sys: ControlSystem, curve: PiecewiseCurve) -> tuple[float, float]:
        """(max |rho . dpsi/dz| on the grid, max |rho . [psi]| at corners)."""
        grid_worst = corner_worst = 0.0
        jumps = corner_jumps(sys, curve)
        for element in self.elements:
            for rho, arc in zip(element.arcs, curve.arcs):
                dz = sys.dpsi_dz(arc.grid, arc.q, arc.z)
                grid_worst = max(grid_worst, float(np.max(np.abs(np.einsum("gi,gia->ga", rho, dz)), initial=0.0)))
            for jump in jumps:
                rho = element.arcs[jump.corner - 1][-1]
                corner_worst = max(corner_worst, abs(float(rho @ jump.jump)))
        return grid_worst, corner_worst


@dataclass(frozen=True, eq=False)
class GramMatrix:
    matrix: np.ndarray           # (n, n)
    metric: np.ndarray           # (r, r)
    alphas: np.ndarray           # (N-1,)
    rank: int
    singular_values: np.ndarray  # of S
    min_eigenvalue: float
    verified_regime: bool        # False when some alpha_s = 0

    @property
    def is_psd(self) -> bool:
        return self.min_eigenvalue >= -1e-9 * max(float(np.trace(self.matrix)), 1.0)


@dataclass(frozen=True)
class WindowIndex:
    t_start: float
    t_end: float
    index: int

    @property
    def length(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True, eq=False)
class AbnormalityReport:
    index: int
    normal: bool
    basis: AnnihilatorBasis
    gram: GramMatrix
    locally_normal: bool
    failing_window: WindowIndex | None
    scan: tuple[WindowIndex, ...]
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def gram_rank(self) -> int:
        return self.gram.rank

    @property
    def ordinary_implied(self) -> bool:
        return self.normal

    def to_dict(self, include_scan: bool = False) -> dict[str, Any]:
        report: dict[str, Any] = {
            "index": self.index,
            "normal": self.normal,
            "locally_normal": self.locally_normal,
            "ordinary_implied": self.ordinary_implied,
            "gram_rank": self.gram_rank,
            "gram_verified_regime": self.gram.verified_regime,
            "tol": self.basis.tol,
            "singular_values": [float(s) for s in self.basis.singular_values],
            "basis_initial": [[float(x) for x in row] for row in self.basis.initial_values],
            "failing_window": (
                None
                if self.failing_window is None
                else [self.failing_window.t_start, self.failing_window.t_end, self.failing_window.index]
            ),
            "notes": list(self.notes),
        }
        if include_scan:
            report["scan"] = [[w.t_start, w.t_end, w.index] for w in self.scan]
        return report


# ── Constraint rows ─────────────────────────────────


@dataclass(frozen=True, eq=False)
class _ConstraintRows:
    phi: tuple[np.ndarray, ...]          # per arc (M+1, n, n)
    raw_rows: tuple[np.ndarray, ...]     # per arc (M+1, r, n): dpsi/dz^T Phi
    weights: tuple[np.ndarray, ...]      # per arc (M+1,) Simpson weights
    grids: tuple[np.ndarray, ...]
    corner_rows: np.ndarray              # (N-1, n): [psi]^T Phi(a_s)
    corner_times: tuple[float, ...]

    def stack(self) -> np.ndarray:
        parts = [rows.reshape(-1, rows.shape[-1]) for rows in self.raw_rows]
        parts.append(self.corner_rows)
        return np.concatenate(parts, axis=0)

    def window_stack(self, t_start: float, t_end: float, arcs: Sequence[tuple[float, float]]) -> np.ndarray:
        eps = 1e-12 * max(1.0, abs(t_start), abs(t_end))
        parts = []
        for (a, b), rows, grid in zip(arcs, self.raw_rows, self.grids):
            if min(b, t_end) - max(a, t_start) <= eps:
                continue
            mask = (grid >= t_start - eps) & (grid <= t_end + eps)
            parts.append(rows[mask].reshape(-1, rows.shape[-1]))
        inside = [t_start + eps < t < t_end - eps for t in self.corner_times]
        parts.append(self.corner_rows[np.array(inside, dtype=bool)] if self.corner_times else self.corner_rows)
        return np.concatenate(parts, axis=0)


def _constraint_rows(sys: ControlSystem, curve: PiecewiseCurve) -> _ConstraintRows:
    phi = propagate_adjoint(sys, curve)
    raw, weights = [], []
    for arc, fundamental in zip(curve.arcs, phi):
        dz = sys.dpsi_dz(arc.grid, arc.q, arc.z)
        raw.append(np.einsum("gia,gik->gak", dz, fundamental))
        weights.append(simpson_weights(arc.steps, arc.h))
    jumps = corner_jumps(sys, curve)
    corner = np.array([jump.jump @ phi[jump.corner - 1][-1] for jump in jumps]).reshape(-1, curve.n)
    return _ConstraintRows(
        phi, tuple(raw), tuple(weights), tuple(arc.grid for arc in curve.arcs), corner, curve.corner_times
    )


def _require_admissible(sys: ControlSystem, curve: PiecewiseCurve, tol: float | None) -> None:
    tol = settings.admissibility_tol if tol is None else tol
    residual = admissibility_residual(sys, curve)
    if residual > tol:
        raise NotAdmissible(residual, tol)


# ── Operations ──────────────────────────────────────


def _basis_from_rows(rows: _ConstraintRows, tol: float) -> AnnihilatorBasis:
    ns = null_space(rows.stack(), tol)
    elements = tuple(
        CovectorPath(tuple(fundamental @ ns.basis[:, j] for fundamental in rows.phi))
        for j in range(ns.basis.shape[1])
    )
    return AnnihilatorBasis(elements, ns.basis.T.copy(), ns.singular_values, tol)


def annihilator(
    sys: ControlSystem,
    curve: PiecewiseCurve,
    tol: float | None = None,
    admissibility_tol: float | None = None,
) -> AnnihilatorBasis:
    tol = settings.svd_tol if tol is None else tol
    _require_admissible(sys, curve, admissibility_tol)
    basis = _basis_from_rows(_constraint_rows(sys, curve), tol)
    logger.info("Annihilator dimension %d (tol %.0e)", basis.dimension, tol)
    return basis


def _gram_from_rows(
    rows: _ConstraintRows, r: int, metric: np.ndarray | None, alphas: Sequence[float] | None, tol: float
) -> GramMatrix:
    n = rows.corner_rows.shape[1]
    metric = np.eye(r) if metric is None else np.asarray(metric, dtype=float)
    if metric.shape != (r, r) or not np.allclose(metric, metric.T, rtol=0.0, atol=1e-12):
        raise BadMetric(f"metric must be a symmetric {r}x{r} matrix")
    try:
        scipy.linalg.cholesky(metric, lower=True)
    except np.linalg.LinAlgError as exc:
        raise BadMetric(f"metric is not positive definite: {exc}") from exc

    corners = rows.corner_rows.shape[0]
    alphas = np.ones(corners) if alphas is None else np.asarray(alphas, dtype=float)
    if alphas.shape != (corners,):
        raise ValidationError(f"expected {corners} corner weights, got {alphas.shape}")

    matrix = np.zeros((n, n))
    for raw, w in zip(rows.raw_rows, rows.weights):
        matrix += np.einsum("g,gak,ab,gbl->kl", w, raw, metric, raw)
    matrix += np.einsum("s,sk,sl->kl", alphas**2, rows.corner_rows, rows.corner_rows)
    matrix = 0.5 * (matrix + matrix.T)

    singular = np.linalg.svd(matrix, compute_uv=False)
    scale = singular[0] if singular.size and singular[0] > 0.0 else 1.0
    eigenvalues = np.linalg.eigvalsh(matrix)
    return GramMatrix(
        matrix=matrix,
        metric=metric,
        alphas=alphas,
        rank=int(np.count_nonzero(singular > tol * scale)),
        singular_values=singular,
        min_eigenvalue=float(eigenvalues[0]) if eigenvalues.size else 0.0,
        verified_regime=bool(np.all(alphas != 0.0)),
    )


def gram_matrix(
    sys: ControlSystem,
    curve: PiecewiseCurve,
    metric: np.ndarray | None = None,
    alphas: Sequence[float] | None = None,
    tol: float | None = None,
    admissibility_tol: float | None = None,
) -> GramMatrix:
    tol = settings.svd_tol if tol is None else tol
    _require_admissible(sys, curve, admissibility_tol)
    gram = _gram_from_rows(_constraint_rows(sys, curve), curve.r, metric, alphas, tol)
    if not gram.verified_regime:
        logger.warning("Gram matrix with a zero corner weight: rank claim outside the verified regime")
    return gram


def default_window_grid(curve: PiecewiseCurve, points: int | None = None) -> list[float]:
    points = settings.scan_points if points is None else points
    candidates = [*np.linspace(curve.t0, curve.t1, points), *curve.corner_times]
    if curve.t0 < 0.0 < curve.t1:
        candidates.append(0.0)
    return _dedupe(candidates, curve.t1 - curve.t0)


def _dedupe(values: Sequence[float], span: float) -> list[float]:
    merged: list[float] = []
    for value in sorted(float(v) for v in values):
        if not merged or value - merged[-1] > 1e-12 * max(span, 1.0):
            merged.append(value)
    return merged


def _scan(
    rows: _ConstraintRows,
    curve: PiecewiseCurve,
    window_grid: Sequence[float],
    tol: float,
) -> list[WindowIndex]:
    points = [t for t in _dedupe(window_grid, curve.t1 - curve.t0) if curve.t0 <= t <= curve.t1]
    windows = [(a, b) for i, a in enumerate(points) for b in points[i + 1:]]
    arcs = [(arc.t_start, arc.t_end) for arc in curve.arcs]
    n = curve.n

    def index_of(window: tuple[float, float]) -> WindowIndex:
        a, b = window
        rank = null_space(rows.window_stack(a, b, arcs), tol).rank
        return WindowIndex(a, b, n - rank)

    workers = max(1, min(settings.threads, len(windows)))
    if workers == 1:
        return [index_of(w) for w in windows]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(index_of, windows))


def local_normality_scan(
    sys: ControlSystem,
    curve: PiecewiseCurve,
    window_grid: Sequence[float] | None = None,
    tol: float | None = None,
) -> list[WindowIndex]:
    tol = settings.svd_tol if tol is None else tol
    grid = default_window_grid(curve) if window_grid is None else list(window_grid)
    return _scan(_constraint_rows(sys, curve), curve, grid, tol)


def _first_failing(scan: Sequence[WindowIndex]) -> WindowIndex | None:
    failing = [w for w in scan if w.index > 0]
    if not failing:
        return None
    return min(failing, key=lambda w: (-w.index, -w.length, w.t_start))


def abnormality_index(
    sys: ControlSystem,
    curve: PiecewiseCurve,
    tol: float | None = None,
    window_grid: Sequence[float] | None = None,
    metric: np.ndarray | None = None,
    alphas: Sequence[float] | None = None,
    admissibility_tol: float | None = None,
) -> AbnormalityReport:
    """Index p, annihilator basis, Gram cross-check and local normality in one pass."""
    tol = settings.svd_tol if tol is None else tol
    _require_admissible(sys, curve, admissibility_tol)
    rows = _constraint_rows(sys, curve)
    basis = _basis_from_rows(rows, tol)
    gram = _gram_from_rows(rows, curve.r, metric, alphas, tol)
    grid = default_window_grid(curve) if window_grid is None else list(window_grid)
    scan = tuple(_scan(rows, curve, grid, tol))
    failing = _first_failing(scan)

    notes = []
    if not gram.verified_regime:
        notes.append("a corner weight alpha_s = 0 was used: the Gram rank claim is outside the verified regime")
    if gram.rank != curve.n - basis.dimension:
        notes.append(f"Gram rank {gram.rank} disagrees with n - p = {curve.n - basis.dimension}")
        logger.warning("Gram rank %d vs n - p = %d", gram.rank, curve.n - basis.dimension)
    if basis.dimension:
        notes.append("curve is abnormal: extremal momenta, when they exist, are not unique")

    logger.info(
        "Abnormality index %d, Gram rank %d, %d/%d windows abnormal",
        basis.dimension,
        gram.rank,
        sum(1 for w in scan if w.index),
        len(scan),
    )
    return AbnormalityReport(
        index=basis.dimension,
        normal=basis.dimension == 0,
        basis=basis,
        gram=gram,
        locally_normal=failing is None,
        failing_window=failing,
        scan=scan,
        notes=tuple(notes),
    )
