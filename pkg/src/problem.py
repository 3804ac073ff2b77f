"""Problem files: INI sections validated by pydantic, then built into domain objects.

Values starting with ``[`` or ``"`` are JSON (lists, quoted expressions);
anything else is taken as a bare string and coerced by the models.
Every validation failure is reported as ``ValidationError`` with the line
of the offending key (or of its section header).
"""

from __future__ import annotations

import configparser
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator
from pydantic import ValidationError as PydanticValidationError

from .config import Settings, settings
from .curve import ControlPath, ExpressionControl, PiecewiseCurve, integrate_admissible
from .errors import ExpressionSyntaxError, UnknownFunction, ValidationError
from .expr import Expression, parse
from .extremal import ShootingSeeds
from .system import ControlSystem, ExtrinsicProblem
from .utils import read_candidate_csv, read_text_file

logger = logging.getLogger(__name__)

# [numerics] keys the engine threads through to the operations
NUMERICS_KEYS = (
    "steps_per_unit",
    "admissibility_tol",
    "svd_tol",
    "shoot_tol",
    "acceptance_tol",
    "scan_points",
)


# ── Models ──────────────────────────────────────────


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSection(_Section):
    name: str = ""
    n: int | None = None
    r: int | None = None
    states: list[str]
    controls: list[str]
    psi: list[str]
    lagrangian: str = "0"

    @field_validator("states")
    @classmethod
    def _state_count(cls, v: list[str], info: ValidationInfo) -> list[str]:
        n = info.data.get("n")
        if n is not None and n != len(v):
            raise ValueError(f"n {n} ≠ {len(v)} state names")
        return v

    @field_validator("controls")
    @classmethod
    def _control_count(cls, v: list[str], info: ValidationInfo) -> list[str]:
        r = info.data.get("r")
        if r is not None and r != len(v):
            raise ValueError(f"r {r} ≠ {len(v)} control names")
        return v

    @field_validator("psi")
    @classmethod
    def _psi_count(cls, v: list[str], info: ValidationInfo) -> list[str]:
        n = info.data.get("n")
        if n is None:
            n = len(info.data.get("states") or [])
        if len(v) != n:
            raise ValueError(f"psi count {len(v)} ≠ n {n}")
        return v


class ExtrinsicSection(_Section):
    free_lagrangian: str
    constraints: list[str] = []
    velocities: list[str] | None = None


class CurveSection(_Section):
    t0: float
    t1: float
    q0: list[float] | None = None
    corners: list[float] = []
    controls: list[list[str]] | None = None
    samples: str | None = Field(default=None, validate_default=True)
    density: float | None = None
    scan_grid: list[float] | None = None

    @field_validator("t1")
    @classmethod
    def _span(cls, v: float, info: ValidationInfo) -> float:
        t0 = info.data.get("t0")
        if t0 is not None and not v > t0:
            raise ValueError(f"t1 {v} must exceed t0 {t0}")
        return v

    @field_validator("corners")
    @classmethod
    def _corner_order(cls, v: list[float], info: ValidationInfo) -> list[float]:
        bounds = [info.data.get("t0", float("-inf")), *v, info.data.get("t1", float("inf"))]
        if any(b <= a for a, b in zip(bounds, bounds[1:])):
            raise ValueError("corner times must increase strictly inside (t0, t1)")
        return v

    @field_validator("controls")
    @classmethod
    def _control_arcs(cls, v: list[list[str]] | None, info: ValidationInfo) -> list[list[str]] | None:
        if v is not None and len(v) != len(info.data.get("corners") or []) + 1:
            raise ValueError(f"{len(v)} control arcs for {len(info.data.get('corners') or []) + 1} curve arcs")
        return v

    @field_validator("samples")
    @classmethod
    def _one_source(cls, v: str | None, info: ValidationInfo) -> str | None:
        if (v is None) == (info.data.get("controls") is None):
            raise ValueError("give exactly one of 'controls' or 'samples'")
        return v


class SolveSection(_Section):
    t0: float
    t1: float
    q_start: list[float]
    q_end: list[float]
    corners: int = 0
    corner_times: list[float] = []
    p0: list[float] | None = None
    z_seeds: list[list[float]] = []
    gauge: str = "t"

    @field_validator("corner_times")
    @classmethod
    def _corner_seeds(cls, v: list[float], info: ValidationInfo) -> list[float]:
        corners = info.data.get("corners", 0)
        if v and len(v) != corners:
            raise ValueError(f"{len(v)} corner times for {corners} corners")
        return v

    @field_validator("z_seeds")
    @classmethod
    def _segment_seeds(cls, v: list[list[float]], info: ValidationInfo) -> list[list[float]]:
        segments = info.data.get("corners", 0) + 1
        if v and len(v) != segments:
            raise ValueError(f"{len(v)} z seeds for {segments} segments")
        return v


class ProblemFile(_Section):
    system: SystemSection
    params: dict[str, float] = {}
    extrinsic: ExtrinsicSection | None = None
    curve: CurveSection | None = None
    solve: SolveSection | None = None
    numerics: dict[str, float] = {}

    @field_validator("numerics")
    @classmethod
    def _numerics_keys(cls, v: dict[str, float]) -> dict[str, float]:
        unknown = sorted(set(v) - set(NUMERICS_KEYS))
        if unknown:
            raise ValueError(f"unknown numerics keys: {', '.join(unknown)}")
        return v


# ── Reading ─────────────────────────────────────────

_HEADER = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_KEY = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*[=:]")


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    lines: dict[tuple[str, str | None], int] = {}
    section = ""
    for number, line in enumerate(text.splitlines(), start=1):
        header = _HEADER.match(line)
        if header:
            section = header.group(1).strip()
            lines.setdefault((section, None), number)
            continue
        key = _KEY.match(line)
        if key and section:
            lines.setdefault((section, key.group(1)), number)
    return lines


def _decode(raw: str, where: str, line: int | None) -> Any:
    value = raw.strip()
    if value.startswith(("[", '"')):
        try:
            return json.loads(value)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{where}: malformed value ({exc.msg})", line) from exc
    return value


def _read_sections(text: str, lines: dict[tuple[str, str | None], int]) -> dict[str, dict[str, Any]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from exc
    return {
        section: {
            key: _decode(raw, f"{section}.{key}", lines.get((section, key)))
            for key, raw in parser.items(section)
        }
        for section in parser.sections()
    }


def _translate(exc: PydanticValidationError, lines: dict[tuple[str, str | None], int]) -> ValidationError:
    error = exc.errors()[0]
    loc = error["loc"]
    section = str(loc[0]) if loc else ""
    key = str(loc[1]) if len(loc) > 1 else None
    line = lines.get((section, key)) or lines.get((section, None))
    message = error["msg"].removeprefix("Value error, ")
    where = ".".join(str(part) for part in loc)
    return ValidationError(f"{where}: {message}" if where else message, line)


# ── Building ────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class Problem:
    model: ProblemFile
    system: ControlSystem
    extrinsic: ExtrinsicProblem | None
    settings: Settings
    source: str
    base_dir: Path | None
    lines: dict[tuple[str, str | None], int]

    @property
    def name(self) -> str:
        return self.system.name or Path(self.source).stem

    def line(self, section: str, key: str | None = None) -> int | None:
        return self.lines.get((section, key)) or self.lines.get((section, None))

    def curve(self) -> PiecewiseCurve:
        spec = self.model.curve
        if spec is None:
            raise ValidationError("problem has no [curve] section")
        if spec.samples is not None:
            path = Path(spec.samples)
            if not path.is_absolute() and self.base_dir is not None:
                path = self.base_dir / path
            curve, _ = read_candidate_csv(path, self.system)
            return curve
        if spec.q0 is None or len(spec.q0) != self.system.n:
            raise ValidationError(f"curve.q0 must list {self.system.n} values", self.line("curve", "q0"))
        controls = []
        for s, arc in enumerate(spec.controls or []):
            if len(arc) != self.system.r:
                raise ValidationError(
                    f"curve.controls[{s}] has {len(arc)} entries, r is {self.system.r}", self.line("curve", "controls")
                )
            exprs = tuple(
                _parse(src, self.system.params, f"curve.controls[{s}][{a}]", self.line("curve", "controls"))
                for a, src in enumerate(arc)
            )
            try:
                controls.append(ExpressionControl(exprs, self.system.params))
            except ValidationError as exc:
                raise ValidationError(f"curve.controls[{s}]: {exc}", self.line("curve", "controls")) from exc
        density = spec.density if spec.density is not None else self.settings.steps_per_unit
        curve = integrate_admissible(
            self.system, ControlPath(tuple(controls)), spec.q0, (spec.t0, spec.t1), spec.corners, density
        )
        logger.info("Curve integrated: %d arc(s) on [%g, %g]", len(curve.arcs), spec.t0, spec.t1)
        return curve

    @property
    def scan_grid(self) -> list[float] | None:
        return None if self.model.curve is None else self.model.curve.scan_grid

    def shooting(self) -> SolveSection:
        if self.model.solve is None:
            raise ValidationError("problem has no [solve] section")
        spec = self.model.solve
        n, r = self.system.n, self.system.r
        for key, values in (("q_start", spec.q_start), ("q_end", spec.q_end), ("p0", spec.p0 or [0.0] * n)):
            if len(values) != n:
                raise ValidationError(f"solve.{key} must list {n} values", self.line("solve", key))
        if any(len(z) != r for z in spec.z_seeds):
            raise ValidationError(f"solve.z_seeds entries must list {r} values", self.line("solve", "z_seeds"))
        return spec

    def seeds(self) -> ShootingSeeds:
        spec = self.shooting()
        return ShootingSeeds(
            p0=tuple(spec.p0 or [0.0] * self.system.n),
            corner_times=tuple(spec.corner_times),
            z=tuple(tuple(z) for z in spec.z_seeds),
        )


def _parse(source: str, params: dict[str, float], where: str, line: int | None) -> Expression:
    try:
        return parse(source, params)
    except (ExpressionSyntaxError, UnknownFunction) as exc:
        raise ValidationError(f"{where}: {exc}", line) from exc


def parse_problem(text: str, source: str = "<string>", base_dir: Path | None = None) -> Problem:
    lines = _line_index(text)
    sections = _read_sections(text, lines)
    try:
        model = ProblemFile.model_validate(sections)
    except PydanticValidationError as exc:
        raise _translate(exc, lines) from exc

    spec = model.system
    params = dict(model.params)

    def line(section: str, key: str | None = None) -> int | None:
        return lines.get((section, key)) or lines.get((section, None))

    psi = tuple(_parse(src, params, f"system.psi[{i}]", line("system", "psi")) for i, src in enumerate(spec.psi))
    lagrangian = _parse(spec.lagrangian, params, "system.lagrangian", line("system", "lagrangian"))
    try:
        system = ControlSystem(tuple(spec.states), tuple(spec.controls), psi, lagrangian, params, spec.name)
    except ValidationError as exc:
        key = "lagrangian" if str(exc).startswith("lagrangian") else "psi"
        raise ValidationError(f"system: {exc}", line("system", key)) from exc

    extrinsic = None
    if model.extrinsic is not None:
        ext = model.extrinsic
        velocities = tuple(ext.velocities) if ext.velocities else tuple(f"{s}_dot" for s in spec.states)
        try:
            extrinsic = ExtrinsicProblem(
                tuple(spec.states),
                velocities,
                _parse(ext.free_lagrangian, params, "extrinsic.free_lagrangian", line("extrinsic", "free_lagrangian")),
                tuple(
                    _parse(g, params, f"extrinsic.constraints[{j}]", line("extrinsic", "constraints"))
                    for j, g in enumerate(ext.constraints)
                ),
                params,
            )
        except ValidationError as exc:
            if exc.line is not None:
                raise
            raise ValidationError(f"extrinsic: {exc}", line("extrinsic")) from exc

    try:
        resolved = settings.override(dict(model.numerics))
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"numerics: {exc}", line("numerics")) from exc

    return Problem(model, system, extrinsic, resolved, source, base_dir, lines)


def load_problem(path: str | Path) -> Problem:
    text = read_text_file(str(path))
    return parse_problem(text, source=str(path), base_dir=Path(path).resolve().parent)


def load_builtin(name: str) -> Problem:
    from .corpus import BUILTINS

    if name not in BUILTINS:
        raise ValidationError(f"unknown builtin '{name}' (known: {', '.join(sorted(BUILTINS))})")
    return parse_problem(BUILTINS[name], source=name)
