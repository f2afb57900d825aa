"""CSV curve files and JSON serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .funcdata import CurveSet, Grid


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _parse_float(text: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value: {text!r}", line)
    return value


def parse_curves_csv(text: str) -> CurveSet:
    """Parse ``t,t_1,...,t_m`` followed by rows ``id,v_1,...,v_m``."""
    rows = [(i + 1, row) for i, row in enumerate(csv.reader(io.StringIO(text))) if row]
    if not rows:
        raise ParseError("empty input")
    line, header = rows[0]
    if header[0].strip().lower() != "t":
        raise ParseError("header must start with 't'", line)
    points = [_parse_float(x, line) for x in header[1:]]
    if len(points) < 2:
        raise ParseError("header needs at least two grid points", line)
    try:
        grid = Grid.from_points(points)
    except ValueError as exc:
        raise ParseError(str(exc), line) from None
    if not rows[1:]:
        raise ParseError("no curves after the header", line)
    ids, values = [], []
    for line, row in rows[1:]:
        if len(row) != grid.m + 1:
            raise ParseError(f"expected {grid.m + 1} fields, found {len(row)}", line)
        ids.append(row[0].strip())
        values.append([_parse_float(x, line) for x in row[1:]])
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate curve ids")
    return CurveSet(grid, np.array(values), tuple(ids))


def read_curves_csv(path) -> CurveSet:
    return parse_curves_csv(Path(path).read_text(encoding="utf-8"))


def _fmt(x: float) -> str:
    return repr(float(x))


def curves_to_csv(curves: CurveSet) -> str:
    lines = ["t," + ",".join(_fmt(t) for t in curves.grid.points)]
    for cid, row in zip(curves.ids, curves.values):
        lines.append(cid + "," + ",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def band_plot_csv(band) -> str:
    """One row per grid point: ``t, lo_k, hi_k`` for every band component."""
    header = ["t"]
    for c in band.components:
        header += [f"lo_{c.k}", f"hi_{c.k}"]
    lines = [",".join(header)]
    for j, t in enumerate(band.grid.points):
        row = [_fmt(t)]
        for c in band.components:
            row += [_fmt(c.lo[j]), _fmt(c.hi[j])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps(obj) -> str:
    """Deterministic JSON; floats use the shortest round-trip representation, non-finite become null."""
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"
