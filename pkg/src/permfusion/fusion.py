"""Kernel-weighted fusion of well-log, well-test and seismic permeability.

All permeabilities are handled in log10(mD). Each well contributes a
well-test term with a ring-shaped kernel peaking near the drainage radius
and a well-log term with a kernel concentrated at the wellbore; the seismic
map enters with a constant weight everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import Grid, GridMap, KernelParams

UNDERFLOW = 1e-300
DRAINAGE_RADIUS = 250.0


def _flush(k):
    return np.where(k < UNDERFLOW, 0.0, k)


def kernel_wt(distance, params: KernelParams):
    """Well-test kernel ``(d/r_d)**alpha * exp(-(d/r_d)**beta)``."""
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    u = d / params.r_d
    with np.errstate(under="ignore"):
        out = _flush(u ** params.alpha * np.exp(-(u ** params.beta)))
    return out if out.ndim else float(out)


def kernel_wl(distance, params: KernelParams):
    """Well-log kernel ``gamma * exp(-(d/r_g)**delta)``."""
    d = np.asarray(distance, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    with np.errstate(under="ignore"):
        out = _flush(params.gamma * np.exp(-((d / params.r_g) ** params.delta)))
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class WellArrays:
    """Column view of a well list: positions, log10 values and presence masks."""

    ids: tuple
    positions: np.ndarray
    wt: np.ndarray
    wt_mask: np.ndarray
    wl: np.ndarray
    wl_mask: np.ndarray

    @classmethod
    def from_wells(cls, wells) -> "WellArrays":
        wells = [w for w in wells if w.usable]
        pos = np.array([w.position for w in wells], dtype=float).reshape(-1, 2)
        wt_mask = np.array([w.wt_value is not None for w in wells], dtype=bool)
        wl_mask = np.array([w.wl_value is not None for w in wells], dtype=bool)
        wt = np.array([np.log10(w.wt_value) if w.wt_value is not None else 0.0 for w in wells])
        wl = np.array([np.log10(w.wl_value) if w.wl_value is not None else 0.0 for w in wells])
        return cls(tuple(w.id for w in wells), pos, wt, wt_mask, wl, wl_mask)

    def __len__(self):
        return len(self.ids)


def well_terms(dist: np.ndarray, wa: WellArrays, params: KernelParams):
    """Per-well kernel weights and weighted values, each shaped (N_grid, N_wells, 2).

    The last axis is (well test, well log); absent sources get zero weight.
    """
    kwt = kernel_wt(dist, params) * wa.wt_mask
    kwl = kernel_wl(dist, params) * wa.wl_mask
    weights = np.stack([kwt, kwl], axis=-1)
    values = np.stack([kwt * wa.wt, kwl * wa.wl], axis=-1)
    return weights, values


def combine(weights, values, seismic: Optional[np.ndarray], w_s: float):
    """Normalized weighted average; sums WT over wells, then WL, then seismic."""
    num = values[..., 0].sum(axis=1) + values[..., 1].sum(axis=1)
    den = weights[..., 0].sum(axis=1) + weights[..., 1].sum(axis=1)
    if seismic is not None and w_s > 0:
        num = num + w_s * seismic
        den = den + w_s
    bad = np.flatnonzero(den == 0)
    if bad.size:
        raise ValueError(f"uncovered grid point(s): {bad[:10].tolist()}")
    return num / den, den


@dataclass(frozen=True)
class FusionResult:
    perm_map: GridMap
    confidence_map: GridMap
    params: KernelParams
    used_wt: bool
    used_wl: bool
    used_seismic: bool


def fuse_map(wells, seismic_map: Optional[GridMap], params: KernelParams, grid: Grid) -> FusionResult:
    """Fuse well and seismic permeabilities over ``grid``.

    Wells missing a source contribute no term for it; Q-Q transformed
    well-log values are used where present. Without a seismic map (or with
    ``w_s == 0``) this is pure fusion, and a point with zero total weight
    raises ``ValueError("uncovered grid point...")``.
    """
    wa = WellArrays.from_wells(wells)
    use_seis = seismic_map is not None and params.w_s > 0
    if len(wa) == 0 and not use_seis:
        raise ValueError("nothing to fuse: no usable wells and no seismic map")
    if seismic_map is not None and seismic_map.grid is not grid and (
            seismic_map.grid.n != grid.n or not np.array_equal(seismic_map.grid.points, grid.points)):
        raise ValueError("seismic map is on a different grid")
    dist = grid.distances_to(wa.positions) if len(wa) else np.zeros((grid.n, 0))
    weights, values = well_terms(dist, wa, params)
    seis = seismic_map.values if use_seis else None
    fused, den = combine(weights, values, seis, params.w_s)
    return FusionResult(
        perm_map=GridMap(grid, fused, "permeability"),
        confidence_map=GridMap(grid, den, "confidence"),
        params=params,
        used_wt=bool(wa.wt_mask.any()),
        used_wl=bool(wa.wl_mask.any()),
        used_seismic=use_seis,
    )


def swt_weights(grid: Grid, positions, r_dr: float = DRAINAGE_RADIUS) -> np.ndarray:
    """Column-normalized exponential weights, shape (N_grid, N_positions)."""
    if r_dr <= 0:
        raise ValueError("r_dr must be positive")
    w = np.exp(-grid.distances_to(positions) / r_dr)
    return w / w.sum(axis=0)


def synthetic_well_test(gmap: GridMap, well_position, r_dr: float = DRAINAGE_RADIUS) -> float:
    """Exponentially weighted average of the map around a well (log10 mD)."""
    w = swt_weights(gmap.grid, [well_position], r_dr)[:, 0]
    return float(w @ gmap.values)


def synthetic_well_tests(gmap: GridMap, positions, r_dr: float = DRAINAGE_RADIUS) -> np.ndarray:
    return swt_weights(gmap.grid, positions, r_dr).T @ gmap.values
