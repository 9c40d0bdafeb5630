"""Cube extraction, training-set expansion and map inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..domain import Grid, GridMap
from ..ingest import SeismicVolume
from .net import CUBE_SHAPE


@dataclass(frozen=True, eq=False)
class RmsCube:
    data: np.ndarray
    center: tuple

    def __post_init__(self):
        if not np.isfinite(self.data).all():
            raise ValueError("cube contains non-finite amplitudes")


@dataclass(frozen=True, eq=False)
class TrainSample:
    cube: RmsCube
    coords: np.ndarray
    target: float
    confidence: float
    position: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not np.isfinite(self.target):
            raise ValueError("target must be finite")
        if self.confidence < 0:
            raise ValueError("confidence must be >= 0")


def window_starts(volume: SeismicVolume, xy, shape=CUBE_SHAPE):
    """Window origins (i0, j0, k0) for map positions and a validity mask."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    hx, hy, hz = (s // 2 for s in shape)
    i = np.rint((xy[:, 0] - volume.origin_x) / volume.dx).astype(int)
    j = np.rint((xy[:, 1] - volume.origin_y) / volume.dy).astype(int)
    k = np.rint(volume.horizon_z(xy[:, 0], xy[:, 1])).astype(int)
    starts = np.column_stack([i - hx, j - hy, k - hz])
    ni, nx, nz = volume.shape
    limits = np.array([ni, nx, nz]) - np.array(shape)
    ok = np.all((starts >= 0) & (starts <= limits), axis=1)
    return starts, ok


def extract_cube(volume: SeismicVolume, point, shape=CUBE_SHAPE) -> RmsCube:
    """RMS window centered at the nearest trace and the horizon sample.

    For even window lengths the center sits at index ``length // 2`` of
    the window.
    """
    starts, ok = window_starts(volume, [point], shape)
    if not ok[0]:
        raise ValueError(f"cube out of volume at {tuple(point)}")
    i, j, k = starts[0]
    data = volume.data[i:i + shape[0], j:j + shape[1], k:k + shape[2]].copy()
    return RmsCube(data, (float(point[0]), float(point[1]), float(k + shape[2] // 2)))


def extract_cubes(volume: SeismicVolume, xy, shape=CUBE_SHAPE):
    """Batch extraction: (cubes for valid points, validity mask)."""
    starts, ok = window_starts(volume, xy, shape)
    view = sliding_window_view(volume.data, shape)
    s = starts[ok]
    return np.ascontiguousarray(view[s[:, 0], s[:, 1], s[:, 2]]), ok


def build_training_set(confidence_map: GridMap, fused_map: GridMap, volume: SeismicVolume,
                       percentile: float = 0.5, shape=CUBE_SHAPE) -> list:
    """Grid points whose kernel confidence lies strictly above the given quantile.

    ``percentile == 0`` keeps every point. Targets come from ``fused_map``;
    points whose cube falls outside the volume are skipped.
    """
    if confidence_map.grid is not fused_map.grid and not np.array_equal(
            confidence_map.grid.points, fused_map.grid.points):
        raise ValueError("maps must share a grid")
    if not 0 <= percentile < 1:
        raise ValueError("percentile must lie in [0, 1)")
    grid = fused_map.grid
    conf = confidence_map.values
    if percentile == 0:
        keep = np.ones(grid.n, dtype=bool)
    else:
        keep = conf > np.quantile(conf, percentile)
    idx = np.flatnonzero(keep)
    cubes, ok = extract_cubes(volume, grid.points[idx], shape)
    idx = idx[ok]
    if idx.size == 0:
        raise ValueError("empty training set")
    coords = grid.normalized_coords(grid.points[idx])
    _, _, kz = window_starts(volume, grid.points[idx], shape)[0].T
    samples = []
    for n, g in enumerate(idx):
        x, y = grid.points[g]
        samples.append(TrainSample(
            cube=RmsCube(cubes[n], (float(x), float(y), float(kz[n] + shape[2] // 2))),
            coords=coords[n], target=float(fused_map.values[g]),
            confidence=float(conf[g]), position=(float(x), float(y))))
    return samples


def predict_map(net, volume: SeismicVolume, grid: Grid, chunk: int = 256) -> GridMap:
    """Seismic permeability (log10 mD) at every grid point.

    Points without a complete cube get the mean prediction and are listed
    in ``GridMap.flagged``.
    """
    starts, ok = window_starts(volume, grid.points, tuple(net.arch.cube_shape))
    if not ok.any():
        raise ValueError("no grid point admits a seismic cube")
    view = sliding_window_view(volume.data, tuple(net.arch.cube_shape))
    valid = np.flatnonzero(ok)
    preds = np.empty(valid.size)
    for a in range(0, valid.size, chunk):
        s = starts[valid[a:a + chunk]]
        preds[a:a + chunk] = net.predict(view[s[:, 0], s[:, 1], s[:, 2]], grid.points[valid[a:a + chunk]])
    values = np.full(grid.n, preds.mean())
    values[valid] = preds
    return GridMap(grid, values, "permeability", flagged=np.flatnonzero(~ok))
