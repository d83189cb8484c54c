"""On-disk formats: JSI matrices as CSV with a JSON sidecar, atomic writes, ingestion.

A JSI CSV looks like::

    # {"axis_unit": "ps", "dispersion_ps_per_nm": -418, ...}   (optional preamble)
    axis_a,<v0>,<v1>,...
    axis_b,<w0>,<w1>,...
    <count>,<count>,...
    ...

Metadata comes from ``<file>.json`` next to the CSV, or from ``#`` preamble
lines holding one JSON object.  Count rows run along ``axis_a``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import JsiRecord, WrappedDistribution, Scenario

SPEED_OF_LIGHT = 299_792_458.0  # m/s
FREQUENCY_UNITS = {"Hz": 1.0, "GHz": 1e9, "THz": 1e12}
TIME_UNITS = {"ps": 1e-12, "ns": 1e-9}


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def fmt(x: float) -> str:
    """Round-trip exact, platform-stable float formatting."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if not math.isfinite(f):
            # JSON has no infinities; encode them explicitly
            return None
        return f
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def rows_to_csv(rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool) else v for v in row])
    return buf.getvalue()


def write_table(path, header: list[str], rows: Iterable[Iterable]) -> Path:
    return atomic_write_text(path, rows_to_csv([header, *rows]))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_jsi(path, jsi: JsiRecord) -> Path:
    """Write counts and axes to CSV and metadata to the JSON sidecar."""
    counts = np.asarray(jsi.counts)
    rows = [["axis_a", *jsi.axis_a], ["axis_b", *jsi.axis_b], *counts.astype(np.int64).tolist()]
    out = atomic_write_text(path, rows_to_csv(rows))
    write_json(sidecar_path(path), dict(jsi.meta))
    return out


def _parse_axis(row: list[str], name: str, lineno: int) -> np.ndarray:
    if not row or row[0].strip() != name:
        raise FormatError(f"line {lineno}: expected header row starting with {name!r}")
    try:
        ax = np.array([float(v) for v in row[1:]])
    except ValueError as exc:
        raise FormatError(f"line {lineno}: non-numeric axis value ({exc})") from None
    if ax.size == 0:
        raise FormatError(f"line {lineno}: empty {name}")
    return ax


def read_csv_matrix(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, dict]:
    """Parse the CSV layout above into ``(counts, axis_a, axis_b, preamble_meta)``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    preamble = []
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        preamble.append(lines[start][1:])
        start += 1
    meta = {}
    if preamble:
        try:
            meta = json.loads("\n".join(preamble))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: preamble is not a JSON object ({exc})") from None
        if not isinstance(meta, dict):
            raise FormatError(f"{path}: preamble must be a JSON object")
    rows = list(csv.reader(lines[start:]))
    if len(rows) < 3:
        raise FormatError(f"{path}: need two axis rows and at least one count row")
    axis_a = _parse_axis(rows[0], "axis_a", start + 1)
    axis_b = _parse_axis(rows[1], "axis_b", start + 2)
    body = rows[2:]
    if len(body) != axis_a.size:
        raise FormatError(f"{path}: {len(body)} count rows but axis_a has {axis_a.size} values")
    counts = np.empty((axis_a.size, axis_b.size))
    for r, row in enumerate(body):
        if len(row) != axis_b.size:
            raise FormatError(f"{path}: count row {r} has {len(row)} entries, axis_b has {axis_b.size}")
        for c, v in enumerate(row):
            try:
                counts[r, c] = float(v)
            except ValueError:
                raise FormatError(f"{path}: count at row {r}, column {c} is not a number: {v!r}") from None
    return counts, axis_a, axis_b, meta


def time_to_frequency(t_ps, t_ref_ps: float, lambda_ref_nm: float, dispersion_ps_per_nm: float) -> np.ndarray:
    """Arrival time (ps) to optical frequency (Hz) through the fibre's dispersion.

    ``lambda = lambda_ref + (t - t_ref) / D`` and ``nu = c / lambda``.
    """
    if dispersion_ps_per_nm == 0 or not math.isfinite(dispersion_ps_per_nm):
        raise FormatError("dispersion must be finite and nonzero")
    lam_nm = lambda_ref_nm + (np.asarray(t_ps, dtype=float) - t_ref_ps) / dispersion_ps_per_nm
    if np.any(lam_nm <= 0):
        raise FormatError("time axis maps to non-positive wavelengths")
    return SPEED_OF_LIGHT / (lam_nm * 1e-9)


def _to_frequency(ax: np.ndarray, meta: dict, party: str) -> np.ndarray:
    unit = meta.get(f"axis_unit_{party}", meta.get("axis_unit", "Hz"))
    if unit in FREQUENCY_UNITS:
        return ax * FREQUENCY_UNITS[unit]
    if unit in TIME_UNITS:
        def get(key):
            v = meta.get(f"{key}_{party}", meta.get(key))
            if v is None:
                raise FormatError(f"time axis for {party} needs {key!r} metadata")
            return float(v)

        D = get("dispersion_ps_per_nm")
        lam = get("lambda_ref_nm")
        t_ref = get("t_ref_ps")
        return time_to_frequency(ax * TIME_UNITS[unit] / 1e-12, t_ref, lam, D)
    raise FormatError(f"unknown axis unit {unit!r}")


def ingest_jsi(path, format: str = "csv") -> JsiRecord:
    """Read a JSI file and return it on frequency axes (Hz).

    Time axes are converted through the dispersion metadata; frequency axes
    pass through after unit scaling.  Sidecar metadata override preamble keys.
    """
    if format != "csv":
        raise FormatError(f"unsupported input format {format!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    counts, axis_a, axis_b, meta = read_csv_matrix(path)
    side = sidecar_path(path)
    if side.exists():
        try:
            extra = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{side}: invalid JSON ({exc})") from None
        if not isinstance(extra, dict):
            raise FormatError(f"{side}: sidecar must be a JSON object")
        meta = {**meta, **extra}
    converted = any(
        meta.get(k, meta.get("axis_unit", "Hz")) in TIME_UNITS for k in ("axis_unit_a", "axis_unit_b")
    )
    nu_a = _to_frequency(axis_a, meta, "a")
    nu_b = _to_frequency(axis_b, meta, "b")
    if converted:
        meta = {**meta, "source_axis_unit": meta.get("axis_unit"), "axis_unit": "Hz"}
        meta.pop("axis_unit_a", None)
        meta.pop("axis_unit_b", None)
    elif meta.get("axis_unit", "Hz") != "Hz":
        meta = {**meta, "axis_unit": "Hz"}
    try:
        return JsiRecord(counts, nu_a, nu_b, meta)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_wrapped(path, wrapped: WrappedDistribution) -> Path:
    """Wrapped N x N matrix as plain CSV (row = Alice grid index) plus sidecar."""
    values = wrapped.values
    rows = values.astype(np.int64).tolist() if wrapped.kind == "counts" else values.tolist()
    out = atomic_write_text(path, rows_to_csv(rows))
    write_json(sidecar_path(path), {"d": wrapped.scenario.d, "M": wrapped.scenario.M, "kind": wrapped.kind})
    return out


def read_wrapped(path) -> WrappedDistribution:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(f"wrapped matrix {path} has no sidecar {side.name}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    sc = Scenario(int(meta["d"]), int(meta["M"]))
    return WrappedDistribution(values, sc, meta.get("kind", "counts"))
