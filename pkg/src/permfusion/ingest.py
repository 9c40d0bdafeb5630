"""Readers for well tables, rel-perm curves, fluids and seismic volumes.

Also converts effective well-test permeability to absolute permeability by
dividing out the total relative mobility of the produced liquid.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .domain import Grid, WellRecord

WELL_COLUMNS = ("id", "x", "y", "k_wl_mD", "k_wt_eff_mD")
OPTIONAL_COLUMNS = (
    "s_w", "rock_type", "h_wl", "h_wt", "date", "type", "k_wt_abs", "k_wl_qq",
)


class IngestError(ValueError):
    pass


def _opt_float(text: str, what: str, line: int) -> Optional[float]:
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise IngestError(f"line {line}: cannot parse {what}={text!r}") from None


def parse_wells(path) -> list:
    """Read a well CSV into ``WellRecord`` objects.

    Empty cells are recorded as absent. Raises ``IngestError`` (with the
    offending line number) on malformed rows, non-positive permeability or
    duplicate well ids.
    """
    wells = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        if tuple(header[:5]) != WELL_COLUMNS:
            raise IngestError(f"{path}: header must start with {','.join(WELL_COLUMNS)}")
        unknown = set(header[5:]) - set(OPTIONAL_COLUMNS)
        if unknown:
            raise IngestError(f"{path}: unknown columns {sorted(unknown)}")
        for line, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) > len(header):
                raise IngestError(f"line {line}: {len(row)} fields, expected {len(header)}")
            row = row + [""] * (len(header) - len(row))
            rec = dict(zip(header, row))
            wid = rec["id"].strip()
            if not wid:
                raise IngestError(f"line {line}: missing well id")
            if wid in seen:
                raise IngestError(f"line {line}: duplicate well id {wid!r}")
            seen.add(wid)
            x = _opt_float(rec["x"], "x", line)
            y = _opt_float(rec["y"], "y", line)
            if x is None or y is None:
                raise IngestError(f"line {line}: missing coordinates")
            vals = {
                "k_wl": _opt_float(rec["k_wl_mD"], "k_wl_mD", line),
                "k_wt_effective": _opt_float(rec["k_wt_eff_mD"], "k_wt_eff_mD", line),
                "k_wt_absolute": _opt_float(rec.get("k_wt_abs", ""), "k_wt_abs", line),
                "k_wl_qq": _opt_float(rec.get("k_wl_qq", ""), "k_wl_qq", line),
            }
            for name, v in vals.items():
                if v is not None and v <= 0:
                    raise IngestError(f"line {line}: non-positive permeability {name}={v}")
            wells.append(WellRecord(
                id=wid, x=x, y=y, **vals,
                s_w=_opt_float(rec.get("s_w", ""), "s_w", line),
                rock_type=rec.get("rock_type", "").strip() or None,
                h_wl=_opt_float(rec.get("h_wl", ""), "h_wl", line),
                h_wt=_opt_float(rec.get("h_wt", ""), "h_wt", line),
                survey_date=rec.get("date", "").strip() or None,
                survey_type=rec.get("type", "").strip() or None,
            ))
    return wells


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_wells(wells, path) -> None:
    header = list(WELL_COLUMNS) + list(OPTIONAL_COLUMNS)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in wells:
            w.writerow([
                r.id, repr(float(r.x)), repr(float(r.y)), _fmt(r.k_wl), _fmt(r.k_wt_effective),
                _fmt(r.s_w), r.rock_type or "", _fmt(r.h_wl), _fmt(r.h_wt),
                r.survey_date or "", r.survey_type or "", _fmt(r.k_wt_absolute), _fmt(r.k_wl_qq),
            ])


def availability_counts(wells) -> tuple:
    """(both, log-only, test-only, neither) counts over the raw measurements."""
    both = sum(1 for w in wells if w.k_wl is not None and w.k_wt_effective is not None)
    wl = sum(1 for w in wells if w.k_wl is not None and w.k_wt_effective is None)
    wt = sum(1 for w in wells if w.k_wl is None and w.k_wt_effective is not None)
    return both, wl, wt, len(wells) - both - wl - wt


@dataclass(frozen=True, eq=False)
class RelPermTable:
    """Oil/water relative permeability curves for one rock type."""

    s_w: np.ndarray
    kr_o: np.ndarray
    kr_w: np.ndarray
    rock_type: str = "default"

    def __post_init__(self):
        s, o, w = (np.asarray(a, dtype=float) for a in (self.s_w, self.kr_o, self.kr_w))
        if not (s.ndim == 1 and s.shape == o.shape == w.shape and len(s) >= 2):
            raise ValueError("rel-perm table needs >= 2 rows of equal-length columns")
        if np.any(np.diff(s) <= 0):
            raise ValueError("S_w must be strictly increasing")
        if np.any(np.diff(o) > 0) or np.any(np.diff(w) < 0):
            raise ValueError("kr_o must be non-increasing and kr_w non-decreasing in S_w")
        for a in (s, o, w):
            if a.min() < 0 or a.max() > 1:
                raise ValueError("rel-perm table values must lie in [0, 1]")
            a.flags.writeable = False
        object.__setattr__(self, "s_w", s)
        object.__setattr__(self, "kr_o", o)
        object.__setattr__(self, "kr_w", w)


def load_relperm(path, rock_type: Optional[str] = None) -> RelPermTable:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return RelPermTable(data[:, 0], data[:, 1], data[:, 2], rock_type or Path(path).stem)


def save_relperm(table: RelPermTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s_w", "kr_o", "kr_w"])
        for row in zip(table.s_w, table.kr_o, table.kr_w):
            w.writerow([repr(float(v)) for v in row])


def interp_relperm(table: RelPermTable, s_w: float) -> tuple:
    """Piecewise-linear (kr_o, kr_w) at water saturation ``s_w``; no extrapolation."""
    if not table.s_w[0] <= s_w <= table.s_w[-1]:
        raise ValueError(
            f"saturation out of range: {s_w} not in [{table.s_w[0]}, {table.s_w[-1]}]")
    return float(np.interp(s_w, table.s_w, table.kr_o)), float(np.interp(s_w, table.s_w, table.kr_w))


@dataclass(frozen=True)
class FluidProps:
    mu_o: float
    mu_w: float
    mu_liq: float

    def __post_init__(self):
        if min(self.mu_o, self.mu_w, self.mu_liq) <= 0:
            raise ValueError("viscosities must be positive")


def load_fluids(path) -> FluidProps:
    d = json.loads(Path(path).read_text())
    return FluidProps(float(d["mu_o"]), float(d["mu_w"]), float(d["mu_liq"]))


def save_fluids(fluids: FluidProps, path) -> None:
    Path(path).write_text(json.dumps(
        {"mu_o": fluids.mu_o, "mu_w": fluids.mu_w, "mu_liq": fluids.mu_liq}, indent=2) + "\n")


def mobility_factor(s_w: float, fluids: FluidProps, table: RelPermTable) -> float:
    """mu_liq * (kr_o/mu_o + kr_w/mu_w), the ratio of effective to absolute permeability."""
    kr_o, kr_w = interp_relperm(table, s_w)
    total = kr_o / fluids.mu_o + kr_w / fluids.mu_w
    if total == 0:
        raise ValueError("zero total mobility")
    return fluids.mu_liq * total


def effective_to_absolute(k_wt_eff: float, s_w: float, fluids: FluidProps,
                          table: RelPermTable) -> float:
    """Absolute permeability (mD) from well-test effective permeability (mD)."""
    if not k_wt_eff > 0:
        raise ValueError("non-positive permeability")
    return k_wt_eff / mobility_factor(s_w, fluids, table)


def convert_wells(wells, fluids: FluidProps, tables, default_s_w: float) -> list:
    """Fill ``k_wt_absolute`` for every well with an effective well-test value.

    ``tables`` is a single ``RelPermTable`` or a dict keyed by rock type; a
    well whose rock type is missing from the dict is an error.
    """
    out = []
    for w in wells:
        if w.k_wt_effective is None:
            out.append(w)
            continue
        if isinstance(tables, RelPermTable):
            table = tables
        else:
            if w.rock_type is None or w.rock_type not in tables:
                raise ValueError(f"well {w.id}: no rel-perm table for rock type {w.rock_type!r}")
            table = tables[w.rock_type]
        s_w = w.s_w if w.s_w is not None else default_s_w
        out.append(replace(w, k_wt_absolute=effective_to_absolute(w.k_wt_effective, s_w, fluids, table)))
    return out


@dataclass(frozen=True, eq=False)
class SeismicVolume:
    """RMS amplitude cube indexed (inline, crossline, sample).

    Inline runs along x and crossline along y. ``horizon`` holds the
    formation-center sample index on the trace lattice, shape (ni, nx).
    """

    data: np.ndarray
    origin_x: float
    origin_y: float
    dx: float
    dy: float
    dz_ms: float
    horizon: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("seismic data must be 3D")
        if min(self.dx, self.dy, self.dz_ms) <= 0:
            raise ValueError("seismic spacings must be positive")
        if self.horizon.shape != self.data.shape[:2]:
            raise ValueError("horizon must cover the trace lattice")
        nz = self.data.shape[2]
        if self.horizon.min() < 0 or self.horizon.max() > nz - 1:
            raise ValueError("horizon outside volume z-range")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def trace_index(self, x: float, y: float) -> tuple:
        """Nearest (inline, crossline) trace to a map position."""
        return (int(np.rint((x - self.origin_x) / self.dx)),
                int(np.rint((y - self.origin_y) / self.dy)))

    def horizon_z(self, x, y) -> np.ndarray:
        """Bilinear horizon sample index at map positions; nearest trace outside the lattice."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        ni, nx = self.horizon.shape
        if ni == 1 or nx == 1:
            i = np.clip(np.rint((x - self.origin_x) / self.dx), 0, ni - 1).astype(int)
            j = np.clip(np.rint((y - self.origin_y) / self.dy), 0, nx - 1).astype(int)
            return self.horizon[i, j].astype(float)
        xs = self.origin_x + self.dx * np.arange(ni)
        ys = self.origin_y + self.dy * np.arange(nx)
        interp = RegularGridInterpolator((xs, ys), self.horizon, method="linear",
                                         bounds_error=False, fill_value=None)
        out = interp(np.column_stack([x, y]))
        outside = (x < xs[0]) | (x > xs[-1]) | (y < ys[0]) | (y > ys[-1])
        if outside.any():
            near = RegularGridInterpolator((xs, ys), self.horizon, method="nearest",
                                           bounds_error=False, fill_value=None)
            out[outside] = near(np.column_stack([x[outside], y[outside]]))
        return out

    def horizon_on_grid(self, grid: Grid) -> np.ndarray:
        return self.horizon_z(grid.x, grid.y)


def load_seismic(header_path, horizon_path, grid: Optional[Grid] = None) -> SeismicVolume:
    """Load a raw little-endian float32 RMS cube plus its horizon.

    The JSON header carries ``ni, nx, nz, origin_x, origin_y, dx, dy, dz_ms``
    and optionally ``payload`` (defaults to the header path with ``.bin``).
    The horizon CSV (``x,y,z_index``) must cover the full trace lattice.
    When ``grid`` is given, the horizon is checked at every grid point.
    """
    header_path = Path(header_path)
    h = json.loads(header_path.read_text())
    payload = header_path.parent / h.get("payload", header_path.with_suffix(".bin").name)
    raw = np.fromfile(payload, dtype="<f4")
    shape = (int(h["ni"]), int(h["nx"]), int(h["nz"]))
    if raw.size != int(np.prod(shape)):
        raise IngestError(f"size mismatch: header {shape} needs {np.prod(shape)} samples, got {raw.size}")
    data = raw.reshape(shape).astype(np.float64)

    hz = np.loadtxt(horizon_path, delimiter=",", skiprows=1, ndmin=2)
    ii = np.rint((hz[:, 0] - h["origin_x"]) / h["dx"]).astype(int)
    jj = np.rint((hz[:, 1] - h["origin_y"]) / h["dy"]).astype(int)
    if ii.min() < 0 or jj.min() < 0 or ii.max() >= shape[0] or jj.max() >= shape[1]:
        raise IngestError("horizon point outside the trace lattice")
    horizon = np.full(shape[:2], np.nan)
    horizon[ii, jj] = hz[:, 2]
    if np.isnan(horizon).any():
        raise IngestError("horizon does not cover every trace")
    if horizon.min() < 0 or horizon.max() > shape[2] - 1:
        raise IngestError("horizon outside volume z-range")
    vol = SeismicVolume(data, float(h["origin_x"]), float(h["origin_y"]), float(h["dx"]),
                        float(h["dy"]), float(h["dz_ms"]), horizon)
    if grid is not None:
        z = vol.horizon_on_grid(grid)
        if z.min() < 0 or z.max() > shape[2] - 1:
            raise IngestError("horizon outside volume z-range")
    return vol


def save_seismic(vol: SeismicVolume, header_path, horizon_path) -> None:
    header_path = Path(header_path)
    payload = header_path.with_suffix(".bin")
    ni, nx, nz = vol.shape
    header = {"ni": ni, "nx": nx, "nz": nz, "origin_x": vol.origin_x, "origin_y": vol.origin_y,
              "dx": vol.dx, "dy": vol.dy, "dz_ms": vol.dz_ms, "payload": payload.name}
    header_path.write_text(json.dumps(header, indent=2) + "\n")
    vol.data.astype("<f4").tofile(payload)
    with open(horizon_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z_index"])
        for i in range(ni):
            for j in range(nx):
                w.writerow([repr(vol.origin_x + i * vol.dx), repr(vol.origin_y + j * vol.dy),
                            repr(float(vol.horizon[i, j]))])
