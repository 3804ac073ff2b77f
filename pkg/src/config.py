"""Configuração centralizada via variáveis de ambiente."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from typing import Any


def _cpu_threads() -> int:
    return int(os.getenv("VARCALC_THREADS", str(os.cpu_count() or 1)))


@dataclass(frozen=True)
class Settings:
    # ── Integrador (RK4 em grade fixa) ──────────────
    steps_per_unit: int = field(
        default_factory=lambda: int(os.getenv("VARCALC_STEPS_PER_UNIT", "400"))
    )
    continuity_tol: float = 1e-8   # curvas externas, nos cantos
    min_arc_length: float = 1e-12
    admissibility_tol: float = field(
        default_factory=lambda: float(os.getenv("VARCALC_ADMISSIBILITY_TOL", "1e-6"))
    )

    # ── Álgebra linear ──────────────────────────────
    rank_tol: float = 1e-9         # relativo, posto de ∂ψ/∂z
    svd_tol: float = field(
        default_factory=lambda: float(os.getenv("VARCALC_SVD_TOL", "1e-8"))
    )
    duality_tol: float = 1e-9
    max_frame_condition: float = 1e12

    # ── Newton (redução hamiltoniana) ───────────────
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    regularity_tol: float = 1e-10

    # ── Shooting ────────────────────────────────────
    shoot_tol: float = 1e-8
    shoot_max_iter: int = 100
    shoot_fd_step: float = 1e-7    # relativo
    line_search_halvings: int = 30
    acceptance_tol: float = field(
        default_factory=lambda: float(os.getenv("VARCALC_ACCEPTANCE_TOL", "1e-6"))
    )

    # ── Normalidade local ───────────────────────────
    scan_points: int = 16
    threads: int = field(default_factory=_cpu_threads)

    # ── Logging ─────────────────────────────────────
    log_level: str = field(
        default_factory=lambda: os.getenv("VARCALC_LOG_LEVEL", "WARNING")
    )

    def override(self, values: dict[str, Any]) -> Settings:
        """Nova instância com os valores de uma seção [numerics]."""
        known = {f.name: f.type for f in fields(self)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise KeyError(f"unknown numerics keys: {', '.join(unknown)}")
        coerced: dict[str, Any] = {}
        for key, value in values.items():
            current = getattr(self, key)
            coerced[key] = type(current)(value)
        return replace(self, **coerced)


settings = Settings()
