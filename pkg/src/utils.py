"""Utility functions for file I/O: problem text, candidate tables and JSON reports."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

from .curve import Arc, CovectorPath, PiecewiseCurve
from .errors import ValidationError

if TYPE_CHECKING:
    from .system import ControlSystem


def read_text_file(path: str) -> str:
    """Reads a UTF-8 text file.

    Raises:
        ValueError: If the file doesn't exist
    """
    if not os.path.isfile(path):
        raise ValueError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


# ── Candidate tables ────────────────────────────────


def candidate_header(sys: ControlSystem, with_momenta: bool = False, multipliers: int = 0) -> list[str]:
    header = ["t", "arc", *sys.state_names, *sys.control_names]
    if with_momenta:
        header += ["p0", *(f"p_{s}" for s in sys.state_names)]
    header += [f"lambda_{k + 1}" for k in range(multipliers)]
    return header


def write_candidate_csv(
    path: str | Path,
    sys: ControlSystem,
    curve: PiecewiseCurve,
    momenta: CovectorPath | None = None,
    multipliers: Sequence[np.ndarray] | None = None,
) -> None:
    """One row per arc sample; corner times appear once per adjacent arc."""
    m = multipliers[0].shape[1] if multipliers else 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(candidate_header(sys, momenta is not None, m))
        for s, arc in enumerate(curve.arcs):
            columns = [arc.grid[:, None], np.full((arc.grid.size, 1), s), arc.q, arc.z]
            if momenta is not None:
                p0 = momenta.p0[s] if momenta.p0 is not None else np.full(arc.grid.size, np.nan)
                columns += [p0[:, None], momenta.arcs[s]]
            if m:
                columns.append(multipliers[s])
            for row in np.hstack(columns):
                writer.writerow([str(int(row[1])) if k == 1 else format(v, ".17g") for k, v in enumerate(row)])


def read_candidate_csv(path: str | Path, sys: ControlSystem) -> tuple[PiecewiseCurve, CovectorPath | None]:
    """Inverse of ``write_candidate_csv`` (multiplier columns are ignored)."""
    text = read_text_file(str(path))
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise ValidationError(f"{path}: empty candidate table")
    header = [h.strip() for h in rows[0]]
    expected = candidate_header(sys)
    if header[: len(expected)] != expected:
        raise ValidationError(f"{path}: header must start with {','.join(expected)}", 1)
    with_momenta = header[len(expected) : len(expected) + 1] == ["p0"]
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValidationError(f"{path}: every row needs {len(header)} columns")

    n, r = sys.n, sys.r
    arcs, momenta, p0 = [], [], []
    for s in np.unique(data[:, 1]).astype(int):
        block = data[data[:, 1] == s]
        grid = block[:, 0]
        arcs.append(Arc(grid[0], grid[-1], grid, block[:, 2 : 2 + n], block[:, 2 + n : 2 + n + r]))
        if with_momenta:
            offset = 2 + n + r
            p0.append(block[:, offset])
            momenta.append(block[:, offset + 1 : offset + 1 + n])
    curve = PiecewiseCurve(tuple(arcs))
    if not with_momenta:
        return curve, None
    has_p0 = all(np.all(np.isfinite(a)) for a in p0)
    return curve, CovectorPath(tuple(momenta), tuple(p0) if has_p0 else None)


# ── JSON reports ────────────────────────────────────


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def write_json(path: str | Path, report: dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(report), f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")
