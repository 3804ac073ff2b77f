"""Exception hierarchy shared by the core layer.

Everything raised on purpose derives from ``VarcalcError`` so the CLI can
map failures to exit codes without catching unrelated bugs.
"""

from __future__ import annotations

from typing import Any


class VarcalcError(Exception):
    """Base class for every error raised by varcalc."""


# ── Expressions ─────────────────────────────────────


class ExpressionSyntaxError(VarcalcError):
    def __init__(self, message: str, offset: int, source: str = "") -> None:
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.source = source


class UnknownFunction(VarcalcError):
    def __init__(self, name: str, offset: int = -1) -> None:
        super().__init__(f"unknown function '{name}'")
        self.name = name
        self.offset = offset


class UnboundSymbol(VarcalcError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unbound symbol '{name}'")
        self.name = name


class NonFinite(VarcalcError):
    def __init__(self, what: str, where: str = "") -> None:
        suffix = f" at {where}" if where else ""
        super().__init__(f"non-finite value in {what}{suffix}")
        self.what = what


# ── Problem files / dimensions ──────────────────────


class ValidationError(VarcalcError):
    def __init__(self, message: str, line: int | None = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


# ── Curves and transport ────────────────────────────


class IntegrationFailure(VarcalcError):
    def __init__(self, message: str, time: float) -> None:
        super().__init__(f"{message} (t = {time:.6g})")
        self.time = time


class SingularFrame(VarcalcError):
    def __init__(self, condition: float, time: float) -> None:
        super().__init__(f"transported frame is singular (cond = {condition:.3g}, t = {time:.6g})")
        self.condition = condition
        self.time = time


class NotAdmissible(VarcalcError):
    def __init__(self, residual: float, tol: float) -> None:
        super().__init__(f"curve is not admissible: residual {residual:.3e} > {tol:.1e}")
        self.residual = residual
        self.tol = tol


class BadMetric(VarcalcError):
    """Control-space metric is not symmetric positive definite."""


# ── Extremals ───────────────────────────────────────


class RegularityFailure(VarcalcError):
    def __init__(self, message: str, time: float | None = None) -> None:
        suffix = f" (t = {time:.6g})" if time is not None else ""
        super().__init__(message + suffix)
        self.time = time


class NoConvergence(VarcalcError):
    def __init__(self, message: str, best: Any = None, residual: float = float("nan")) -> None:
        super().__init__(message)
        self.best = best
        self.residual = residual


# ── Multipliers ─────────────────────────────────────


class RankDeficient(VarcalcError):
    def __init__(self, message: str, time: float | None = None) -> None:
        super().__init__(message)
        self.time = time


class Inconsistent(VarcalcError):
    def __init__(self, message: str, residual: float = float("nan"), path: Any = None) -> None:
        super().__init__(message)
        self.residual = residual
        self.path = path
