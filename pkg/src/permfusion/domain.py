"""Core data types shared across the package: grid, wells, maps, kernel constants."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAP_KINDS = ("permeability", "confidence", "difference", "truth")


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def points_in_polygon(points: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd rule point-in-polygon test.

    Parameters
    ----------
    points : (N, 2) array
    polygon : (M, 2) array of vertices, open or closed ring.

    Returns
    -------
    (N,) boolean mask, True for points inside.
    """
    points = np.asarray(points, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    if len(poly) > 1 and np.array_equal(poly[0], poly[-1]):
        poly = poly[:-1]
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    x0, y0 = poly[-1]
    for x1, y1 in poly:
        crosses = (y1 > y) != (y0 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (x0 - x1) * (y - y1) / (y0 - y1) + x1
        inside ^= crosses & (x < x_cross)
        x0, y0 = x1, y1
    return inside


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered set of 2D map points (meters), row-major by (y, then x)."""

    points: np.ndarray
    boundary: Optional[np.ndarray] = None
    bounds: Optional[tuple] = None
    spacing: Optional[float] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("grid points must have shape (N, 2)")
        if len(pts) == 0:
            raise ValueError("empty grid")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("grid points must be unique")
        object.__setattr__(self, "points", _frozen_array(pts))
        if self.boundary is not None:
            poly = _frozen_array(self.boundary)
            object.__setattr__(self, "boundary", poly)
            if not points_in_polygon(pts, poly).all():
                raise ValueError("grid point outside boundary")

    def __len__(self):
        return len(self.points)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    def distances_to(self, positions) -> np.ndarray:
        """Euclidean distances, shape (N_grid, len(positions))."""
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        diff = self.points[:, None, :] - pos[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def nearest_index(self, position) -> int:
        return int(np.argmin(self.distances_to([position])[:, 0]))

    def normalized_coords(self, points=None) -> np.ndarray:
        """Min-max scale coordinates to [-1, 1] using this grid's extent."""
        pts = self.points if points is None else np.atleast_2d(np.asarray(points, dtype=float))
        lo = self.points.min(axis=0)
        span = self.points.max(axis=0) - lo
        span = np.where(span > 0, span, 1.0)
        return 2.0 * (pts - lo) / span - 1.0


def build_grid(bounds, spacing: float, boundary=None) -> Grid:
    """Regular lattice over ``bounds = (xmin, xmax, ymin, ymax)``, clipped to ``boundary``.

    Points are ordered row-major: y is the slow index, x the fast one.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("empty grid: degenerate bounds")
    # small tolerance keeps the upper edge when the extent is a multiple of spacing
    nx = int(np.floor((xmax - xmin) / spacing + 1e-9)) + 1
    ny = int(np.floor((ymax - ymin) / spacing + 1e-9)) + 1
    xs = xmin + spacing * np.arange(nx)
    ys = ymin + spacing * np.arange(ny)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    poly = None
    if boundary is not None:
        poly = np.asarray(boundary, dtype=float)
        pts = pts[points_in_polygon(pts, poly)]
    if len(pts) == 0:
        raise ValueError("empty grid")
    return Grid(pts, boundary=poly, bounds=(xmin, xmax, ymin, ymax), spacing=float(spacing))


def save_grid(grid: Grid, path) -> None:
    """Write ``<stem>.json`` header and ``<stem>.csv`` body (index, x, y)."""
    path = Path(path)
    body = path.with_suffix(".csv")
    header = {
        "bounds": list(grid.bounds) if grid.bounds is not None else None,
        "spacing": grid.spacing,
        "count": grid.n,
        "boundary": grid.boundary.tolist() if grid.boundary is not None else None,
        "points": body.name,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")
    with open(body, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "y"])
        for i, (x, y) in enumerate(grid.points):
            w.writerow([i, repr(float(x)), repr(float(y))])


def load_grid(path) -> Grid:
    path = Path(path).with_suffix(".json")
    header = json.loads(path.read_text())
    body = path.parent / header.get("points", path.with_suffix(".csv").name)
    data = np.loadtxt(body, delimiter=",", skiprows=1, ndmin=2)
    if len(data) != header["count"]:
        raise ValueError(f"grid body has {len(data)} rows, header says {header['count']}")
    order = np.argsort(data[:, 0], kind="stable")
    pts = data[order, 1:3]
    bounds = tuple(header["bounds"]) if header.get("bounds") else None
    boundary = np.asarray(header["boundary"]) if header.get("boundary") else None
    return Grid(pts, boundary=boundary, bounds=bounds, spacing=header.get("spacing"))


@dataclass(frozen=True, eq=False)
class GridMap:
    """One finite value per grid point.

    Permeability maps hold log10(mD); confidence maps hold the total kernel
    weight. ``flagged`` lists point indices whose value is a fallback.
    """

    grid: Grid
    values: np.ndarray
    kind: str = "permeability"
    flagged: tuple = ()

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise ValueError(f"map has {vals.size} values for a grid of {self.grid.n} points")
        if not np.isfinite(vals).all():
            raise ValueError("map values must be finite")
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        object.__setattr__(self, "values", _frozen_array(vals))
        object.__setattr__(self, "flagged", tuple(int(i) for i in self.flagged))

    def __len__(self):
        return self.grid.n

    def linear(self) -> np.ndarray:
        """Values converted from log10 mD to mD."""
        return np.power(10.0, self.values)

    def with_values(self, values, kind=None) -> "GridMap":
        return GridMap(self.grid, values, kind or self.kind)


def save_map(gmap: GridMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "y", "value"])
        for i, ((x, y), v) in enumerate(zip(gmap.grid.points, gmap.values)):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(v))])


def load_map(path, grid: Optional[Grid] = None, kind: str = "permeability") -> GridMap:
    """Read a map CSV. When ``grid`` is given the coordinates must match it."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    data = data[np.argsort(data[:, 0], kind="stable")]
    if grid is None:
        grid = Grid(data[:, 1:3])
    elif len(data) != grid.n or not np.allclose(data[:, 1:3], grid.points):
        raise ValueError(f"{path}: map coordinates do not match the grid")
    return GridMap(grid, data[:, 3], kind)


@dataclass(frozen=True)
class WellRecord:
    """One well: position plus interpreted permeabilities in mD (``None`` = absent)."""

    id: str
    x: float
    y: float
    k_wl: Optional[float] = None
    k_wt_effective: Optional[float] = None
    k_wt_absolute: Optional[float] = None
    k_wl_qq: Optional[float] = None
    s_w: Optional[float] = None
    rock_type: Optional[str] = None
    h_wl: Optional[float] = None
    h_wt: Optional[float] = None
    survey_date: Optional[str] = None
    survey_type: Optional[str] = None

    def __post_init__(self):
        for name in ("k_wl", "k_wt_effective", "k_wt_absolute", "k_wl_qq"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"well {self.id}: non-positive permeability {name}={v}")

    @property
    def position(self) -> tuple:
        return (self.x, self.y)

    @property
    def wl_value(self) -> Optional[float]:
        """Well-log permeability used for fusion (Q-Q transformed when available)."""
        return self.k_wl_qq if self.k_wl_qq is not None else self.k_wl

    @property
    def wt_value(self) -> Optional[float]:
        """Well-test permeability used for fusion (absolute when available)."""
        return self.k_wt_absolute if self.k_wt_absolute is not None else self.k_wt_effective

    @property
    def usable(self) -> bool:
        return self.wl_value is not None or self.wt_value is not None

    @property
    def interpreted(self) -> Optional[float]:
        """Representative permeability: well test if present, else well log."""
        return self.wt_value if self.wt_value is not None else self.wl_value


PARAM_NAMES = ("alpha", "beta", "gamma", "delta", "r_d", "r_g", "w_s")


@dataclass(frozen=True)
class KernelParams:
    """The seven tunable kernel constants."""

    alpha: float
    beta: float
    gamma: float
    delta: float
    r_d: float
    r_g: float
    w_s: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "w_s":
                if v < 0:
                    raise ValueError("w_s must be >= 0")
            elif not v > 0:
                raise ValueError(f"kernel parameter {f.name} must be > 0, got {v}")

    def as_array(self, names: Sequence[str] = PARAM_NAMES) -> np.ndarray:
        return np.array([getattr(self, n) for n in names], dtype=float)

    @classmethod
    def from_array(cls, values, names: Sequence[str] = PARAM_NAMES, **fixed) -> "KernelParams":
        kw = dict(fixed)
        kw.update({n: float(v) for n, v in zip(names, values)})
        return cls(**kw)

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def replace(self, **kw) -> "KernelParams":
        d = self.to_dict()
        d.update(kw)
        return KernelParams(**d)


def save_params(params: KernelParams, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


def load_params(path) -> KernelParams:
    d = json.loads(Path(path).read_text())
    return KernelParams(**{k: float(v) for k, v in d.items() if k in PARAM_NAMES})
