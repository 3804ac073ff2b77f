"""Analysis engine: orquestra check, abnormality, solve, verify, multipliers e gauge-test.

Cada método devolve um ``Outcome``: relatório em dicts simples (pronto para
JSON, sem tempos, para saídas determinísticas) mais os objetos necessários
para exportar CSV.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .abnormality import abnormality_index, default_window_grid
from .curve import admissibility_residual, corner_jumps
from .errors import Inconsistent, NoConvergence, RankDeficient, ValidationError
from .extremal import NO_CERTIFICATE, ExtremalCandidate, candidate, gauge_transform, shoot_extremal, stationarity_check
from .multipliers import MultiplierPath, check_embedding, recover_multipliers, verify_correspondence
from .problem import Problem
from .system import ControlSystem
from .utils import read_candidate_csv

logger = logging.getLogger(__name__)


@dataclass
class Outcome:
    report: dict[str, Any]
    passed: bool
    candidate: ExtremalCandidate | None = None
    multipliers: MultiplierPath | None = None
    elapsed_ms: int = 0
    extras: dict[str, Any] = field(default_factory=dict)


def _elapsed_ms(start: float) -> int:
    return int((time.monotonic() - start) * 1000)


class AnalysisEngine:
    """Executa os comandos sobre um problema carregado."""

    def __init__(self, problem: Problem) -> None:
        self.problem = problem
        self.settings = problem.settings

    @property
    def system(self) -> ControlSystem:
        return self.problem.system

    def _base(self, command: str) -> dict[str, Any]:
        return {"problem": self.problem.name, "command": command}

    # ── check ───────────────────────────────────────

    def check(self, tol: float | None = None) -> Outcome:
        """Resíduo de admissibilidade, posto de ∂ψ/∂z e saltos nos cantos."""
        start = time.monotonic()
        tol = self.settings.admissibility_tol if tol is None else tol
        sys = self.system
        curve = self.problem.curve()
        residual = admissibility_residual(sys, curve)

        worst_ratio = np.inf
        worst_time = curve.t0
        for arc in curve.arcs:
            if sys.r == 0:
                break
            singular = np.linalg.svd(sys.dpsi_dz(arc.grid, arc.q, arc.z), compute_uv=False)
            ratio = singular[:, sys.r - 1] / np.maximum(singular[:, 0], 1e-300)
            k = int(np.argmin(ratio))
            if ratio[k] < worst_ratio:
                worst_ratio, worst_time = float(ratio[k]), float(arc.grid[k])
        rank_ok = sys.r == 0 or worst_ratio > self.settings.rank_tol

        jumps = corner_jumps(sys, curve)
        report = self._base("check") | {
            "admissibility_residual": residual,
            "tol": tol,
            "admissible": residual <= tol,
            "rank_ok": bool(rank_ok),
            "min_singular_ratio": None if sys.r == 0 else worst_ratio,
            "min_singular_time": None if sys.r == 0 else worst_time,
            "rk4_error_estimate": max(arc.error_estimate for arc in curve.arcs),
            "corner_jumps": [
                {"corner": j.corner, "time": j.time, "jump": [float(x) for x in j.jump]} for j in jumps
            ],
        }
        if not rank_ok:
            logger.warning("∂ψ/∂z perde posto em t=%g", worst_time)
        passed = bool(residual <= tol)
        return Outcome(report, passed, elapsed_ms=_elapsed_ms(start))

    # ── abnormality ─────────────────────────────────

    def abnormality(self, tol: float | None = None, scan_local: bool = False) -> Outcome:
        """Índice de anormalidade, Gram e (opcionalmente) a varredura local."""
        start = time.monotonic()
        tol = self.settings.svd_tol if tol is None else tol
        curve = self.problem.curve()
        grid = self.problem.scan_grid or default_window_grid(curve, self.settings.scan_points)
        result = abnormality_index(
            self.system, curve, tol=tol, window_grid=grid, admissibility_tol=self.settings.admissibility_tol
        )

        report = self._base("abnormality") | result.to_dict(include_scan=scan_local)
        report["n"] = curve.n
        report["gram_singular_values"] = [float(s) for s in result.gram.singular_values]
        report["gram_min_eigenvalue"] = result.gram.min_eigenvalue
        if not scan_local:
            report["locally_normal"] = None
            report["failing_window"] = None
        passed = result.normal and (result.locally_normal or not scan_local)
        return Outcome(report, passed, elapsed_ms=_elapsed_ms(start), extras={"result": result})

    # ── solve ───────────────────────────────────────

    def solve(
        self,
        tol: float | None = None,
        on_progress: Callable[[int, float], None] | None = None,
    ) -> Outcome:
        """Shooting com as sementes do [solve]; NoConvergence ainda devolve o melhor iterado."""
        start = time.monotonic()
        tol = self.settings.acceptance_tol if tol is None else tol
        spec = self.problem.shooting()
        trace: list[float] = []

        def progress(iteration: int, norm: float) -> None:
            trace.append(norm)
            if on_progress is not None:
                on_progress(iteration, norm)

        report = self._base("solve") | {"tol": tol, "corners": spec.corners}
        try:
            cand = shoot_extremal(
                self.system,
                spec.q_start,
                spec.q_end,
                (spec.t0, spec.t1),
                n_corners=spec.corners,
                seeds=self.problem.seeds(),
                grid_density=self.settings.steps_per_unit,
                tol=self.settings.shoot_tol,
                svd_tol=self.settings.svd_tol,
                on_progress=progress,
            )
        except NoConvergence as exc:
            logger.warning("Shooting não convergiu: %s", exc)
            best = exc.best if isinstance(exc.best, ExtremalCandidate) else None
            report |= {
                "converged": False,
                "iterations": max(len(trace) - 1, 0),
                "trace": list(trace),
                "shooting_residual": exc.residual,
                "residuals": None if best is None or best.residuals is None else best.residuals.to_dict(),
                "corner_times": [] if best is None else list(best.corner_times),
                "notes": [str(exc)],
            }
            return Outcome(report, False, best, elapsed_ms=_elapsed_ms(start))

        residuals = cand.residuals
        assert residuals is not None
        report |= {
            "converged": True,
            "iterations": max(len(trace) - 1, 0),
            "trace": list(trace),
            "shooting_residual": trace[-1] if trace else 0.0,
            "residuals": residuals.to_dict(),
            "corner_times": list(cand.corner_times),
            "initial_momentum": [float(x) for x in cand.momenta.initial],
            "abnormality_index": None if cand.abnormality is None else cand.abnormality.index,
            "notes": list(cand.notes),
        }
        return Outcome(report, residuals.passes(tol), cand, elapsed_ms=_elapsed_ms(start))

    # ── verify ──────────────────────────────────────

    def load_candidate(self, path: str | Path) -> ExtremalCandidate:
        curve, momenta = read_candidate_csv(path, self.system)
        if momenta is None:
            raise ValidationError(f"{path}: candidate table has no momentum columns")
        return candidate(self.system, curve, momenta.arcs)

    def verify(self, candidate_path: str | Path, tol: float | None = None, stationarity: bool = False) -> Outcome:
        """Resíduos das equações de extremal para um candidato lido de CSV."""
        start = time.monotonic()
        tol = self.settings.acceptance_tol if tol is None else tol
        cand = self.load_candidate(candidate_path)
        residuals = cand.residuals
        assert residuals is not None
        passed = residuals.passes(tol)
        report = self._base("verify") | {
            "tol": tol,
            "residuals": residuals.to_dict(),
            "corner_times": list(cand.corner_times),
            "passed": passed,
        }
        if stationarity:
            check = stationarity_check(self.system, cand)
            report["stationarity"] = {
                "max_derivative": check.max_derivative,
                "derivatives": list(check.derivatives),
                "first_variations": list(check.first_variations),
                "endpoint_defects": list(check.endpoint_defects),
            }
            passed = passed and check.passes()
        if not passed:
            report["notes"] = [NO_CERTIFICATE]
        return Outcome(report, passed, cand, elapsed_ms=_elapsed_ms(start))

    # ── multipliers ─────────────────────────────────

    def _candidate_for(self, candidate_path: str | Path | None) -> ExtremalCandidate:
        if candidate_path is not None:
            return self.load_candidate(candidate_path)
        solved = self.solve()
        if solved.candidate is None or not solved.report["converged"]:
            raise NoConvergence(f"{NO_CERTIFICATE}: shooting did not converge", best=solved.candidate)
        return solved.candidate

    def multipliers(self, candidate_path: str | Path | None = None, tol: float | None = None) -> Outcome:
        """λ ao longo do extremal e o resíduo de Euler-Lagrange extrínseco."""
        start = time.monotonic()
        tol = self.settings.acceptance_tol if tol is None else tol
        ext = self.problem.extrinsic
        if ext is None:
            raise ValidationError("problem has no [extrinsic] section", self.problem.line("extrinsic"))
        sys = self.system
        cand = self._candidate_for(candidate_path)
        embedding = check_embedding(ext, sys, cand.curve)
        report = self._base("multipliers") | {
            "tol": tol,
            "m": ext.m,
            "embedding": {
                "constraint": embedding.constraint,
                "tangency": embedding.tangency,
                "lagrangian": embedding.lagrangian,
                "passed": embedding.passes(self.settings.admissibility_tol),
            },
        }
        try:
            lam = recover_multipliers(ext, sys, cand, tol, admissibility_tol=self.settings.admissibility_tol)
        except (Inconsistent, RankDeficient) as exc:
            logger.warning("Multiplicadores não recuperados: %s", exc)
            report |= {"recovered": False, "notes": [str(exc)]}
            return Outcome(report, False, cand, elapsed_ms=_elapsed_ms(start))

        correspondence = verify_correspondence(ext, sys, cand, lam)
        flat = np.concatenate(lam.arcs) if lam.arcs else np.zeros((0, ext.m))
        report |= {
            "recovered": True,
            "solve_residual": lam.residual,
            "correspondence": correspondence.to_dict(),
            "lambda_range": [
                [float(flat[:, k].min()), float(flat[:, k].max())] for k in range(flat.shape[1])
            ],
        }
        passed = correspondence.passes(tol) and embedding.passes(self.settings.admissibility_tol)
        return Outcome(report, passed, cand, lam, elapsed_ms=_elapsed_ms(start))

    # ── gauge-test ──────────────────────────────────

    def gauge_test(
        self, f: str | None = None, candidate_path: str | Path | None = None, tol: float | None = None
    ) -> Outcome:
        """Transforma (𝓛, p) por f e confere que o candidato continua extremal."""
        start = time.monotonic()
        tol = self.settings.acceptance_tol if tol is None else tol
        if f is None:
            spec = self.problem.model.solve
            f = spec.gauge if spec is not None else "t"
        cand = self._candidate_for(candidate_path)
        _, gauged = gauge_transform(self.system, cand, f)
        before, after = cand.residuals, gauged.residuals
        assert before is not None and after is not None
        report = self._base("gauge-test") | {
            "tol": tol,
            "gauge": f,
            "residuals_before": before.to_dict(),
            "residuals_after": after.to_dict(),
            "curve_identical": gauged.curve is cand.curve,
        }
        passed = before.passes(tol) and after.passes(tol) and gauged.curve is cand.curve
        report["passed"] = passed
        return Outcome(report, passed, gauged, elapsed_ms=_elapsed_ms(start))
