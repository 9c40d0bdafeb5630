"""Synthetic ground truth: a log-normal permeability field, wells sampled from
it with source-specific errors, and a seismic RMS volume linked to it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .domain import Grid, GridMap, WellRecord, build_grid, save_grid, save_map
from .ingest import (FluidProps, RelPermTable, SeismicVolume, mobility_factor, save_fluids,
                     save_relperm, save_seismic, write_wells)


@dataclass(frozen=True)
class SynthConfig:
    nx: int = 60
    ny: int = 60
    spacing: float = 50.0
    corr_cells: float = 16.0
    log_mean: float = 1.5
    log_sd: float = 0.5
    n_wells: int = 40
    layout: str = "clustered"  # or "uniform"
    n_clusters: int = 4
    cluster_spread: float = 250.0
    frac_wl_only: float = 0.2
    frac_wt_only: float = 0.05
    frac_none: float = 0.0
    wl_bias: float = 1.5
    wl_shape: float = 0.6
    wl_scatter: float = 0.05
    wt_radius: float = 100.0
    wt_scatter: float = 0.05
    rms_base: float = 1.0
    link_slope: float = 1.0
    noise: float = 0.2
    noise_smooth: float = 1.5
    nz: int = 64
    pad: int = 4
    s_w_range: tuple = (0.3, 0.6)
    mu_o: float = 2.0
    mu_w: float = 0.5
    mu_liq: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if min(self.nx, self.ny) < 1 or self.spacing <= 0 or self.corr_cells <= 0:
            raise ValueError("grid size, spacing and correlation length must be positive")
        if self.log_sd < 0 or self.noise < 0:
            raise ValueError("scales must be non-negative")
        if self.n_wells < 3:
            raise ValueError("need at least 3 wells")
        if self.n_wells > self.nx * self.ny:
            raise ValueError("more wells than grid points")
        if self.layout not in ("clustered", "uniform"):
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def corr_length(self) -> float:
        return self.corr_cells * self.spacing

    def replace(self, **kw) -> "SynthConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["s_w_range"] = list(self.s_w_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "s_w_range" in d:
            d["s_w_range"] = tuple(d["s_w_range"])
        return cls(**d)


def synth_grid(config: SynthConfig) -> Grid:
    sp = config.spacing
    return build_grid((0.0, (config.nx - 1) * sp, 0.0, (config.ny - 1) * sp), sp)


def default_relperm() -> RelPermTable:
    s = np.linspace(0.2, 0.8, 7)
    u = (s - 0.2) / 0.6
    return RelPermTable(s, (1.0 - u) ** 2, 0.4 * u ** 2, "synthetic")


def generate_field(config: SynthConfig, grid: Grid = None) -> GridMap:
    """Gaussian random field in log10 mD, standardized to the requested mean and sd.

    White noise smoothed with a Gaussian filter; the margin keeps the
    filter's boundary handling away from the cropped field.
    """
    grid = grid or synth_grid(config)
    if config.log_sd == 0:
        return GridMap(grid, np.full(grid.n, config.log_mean), "truth")
    rng = np.random.default_rng(config.seed)
    sigma = config.corr_cells / 2.0
    m = int(np.ceil(3 * sigma))
    noise = rng.standard_normal((config.ny + 2 * m, config.nx + 2 * m))
    field = gaussian_filter(noise, sigma, mode="wrap")[m:m + config.ny, m:m + config.nx]
    field = (field - field.mean()) / field.std()
    return GridMap(grid, config.log_mean + config.log_sd * field.ravel(), "truth")


def _well_sites(config: SynthConfig, grid: Grid, rng) -> np.ndarray:
    if config.layout == "uniform":
        return rng.choice(grid.n, size=config.n_wells, replace=False)
    lo = grid.points.min(axis=0)
    hi = grid.points.max(axis=0)
    centers = lo + (hi - lo) * (0.15 + 0.7 * rng.random((config.n_clusters, 2)))
    chosen = []
    taken = set()
    while len(chosen) < config.n_wells:
        c = centers[rng.integers(config.n_clusters)]
        p = c + rng.normal(0.0, config.cluster_spread, size=2)
        if np.any(p < lo) or np.any(p > hi):
            continue
        idx = grid.nearest_index(p)
        if idx not in taken:
            taken.add(idx)
            chosen.append(idx)
    return np.array(chosen)


def sample_wells(truth: GridMap, config: SynthConfig, fluids: FluidProps = None,
                 table: RelPermTable = None) -> list:
    """Wells at distinct grid points with noisy log and test interpretations.

    Well logs see the local truth through a distribution distortion
    (``wl_shape`` scales deviations from the field mean, ``wl_bias``
    multiplies the value) plus log-normal scatter. Well tests see an
    exponentially weighted average of the truth within ``wt_radius`` plus
    scatter, reported as effective permeability (absolute times the total
    mobility at the well's water saturation).
    """
    rng = np.random.default_rng(config.seed + 1)
    fluids = fluids or FluidProps(config.mu_o, config.mu_w, config.mu_liq)
    table = table or default_relperm()
    grid = truth.grid
    sites = _well_sites(config, grid, rng)
    t = truth.values
    n = len(sites)
    order = rng.permutation(n)
    n_none = int(round(config.frac_none * n))
    n_wt = int(round(config.frac_wt_only * n))
    n_wl = int(round(config.frac_wl_only * n))
    kind = np.full(n, "both", dtype=object)
    kind[order[:n_none]] = "none"
    kind[order[n_none:n_none + n_wt]] = "wt"
    kind[order[n_none + n_wt:n_none + n_wt + n_wl]] = "wl"

    wl_noise = rng.normal(0.0, config.wl_scatter, n)
    wt_noise = rng.normal(0.0, config.wt_scatter, n)
    s_w = rng.uniform(*config.s_w_range, n)
    h = rng.uniform(2.0, 25.0, (n, 2))
    center = config.log_mean
    wells = []
    for w, g in enumerate(sites):
        log_wl = center + config.wl_shape * (t[g] - center) + np.log10(config.wl_bias) + wl_noise[w]
        if config.wt_radius > 0:
            d = np.hypot(grid.x - grid.x[g], grid.y - grid.y[g])
            wgt = np.exp(-d / config.wt_radius)
            log_wt = float(wgt @ t / wgt.sum()) + wt_noise[w]
        else:
            log_wt = t[g] + wt_noise[w]
        k_abs = 10.0 ** log_wt
        k_eff = k_abs * mobility_factor(s_w[w], fluids, table)
        has_wl = kind[w] in ("both", "wl")
        has_wt = kind[w] in ("both", "wt")
        wells.append(WellRecord(
            id=f"W{w + 1:03d}", x=float(grid.x[g]), y=float(grid.y[g]),
            k_wl=float(10.0 ** log_wl) if has_wl else None,
            k_wt_effective=float(k_eff) if has_wt else None,
            s_w=float(s_w[w]) if has_wt else None,
            h_wl=float(h[w, 0]) if has_wl else None,
            h_wt=float(h[w, 1]) if has_wt else None,
            survey_type="build-up" if has_wt else None,
        ))
    return wells


def rms_link(log_perm, config: SynthConfig):
    """Monotone map from log10 permeability to RMS amplitude."""
    return config.rms_base * np.exp(config.link_slope * (np.asarray(log_perm) - config.log_mean))


def synthesize_seismic(truth: GridMap, config: SynthConfig) -> SeismicVolume:
    """RMS volume on the grid lattice, padded so every grid point admits a full cube.

    Each trace equals ``rms_link(truth)`` plus band-limited noise whose
    amplitude is ``noise`` times the spread of the link values. The horizon
    is flat at mid-depth.
    """
    rng = np.random.default_rng(config.seed + 2)
    p = config.pad
    field = truth.values.reshape(config.ny, config.nx)
    field = np.pad(field, p, mode="reflect").T  # (inline=x, crossline=y)
    traces = rms_link(field, config)
    data = np.repeat(traces[:, :, None], config.nz, axis=2)
    if config.noise > 0:
        z = gaussian_filter(rng.standard_normal(data.shape), config.noise_smooth)
        z /= z.std()
        scale = traces.std() if traces.std() > 0 else config.rms_base
        data = data + config.noise * scale * z
    horizon = np.full(field.shape, float(config.nz // 2))
    sp = config.spacing
    return SeismicVolume(data, -p * sp, -p * sp, sp, sp, 2.0, horizon)


@dataclass(frozen=True, eq=False)
class SyntheticField:
    config: SynthConfig
    grid: Grid
    truth: GridMap
    wells: tuple
    volume: SeismicVolume
    fluids: FluidProps
    relperm: RelPermTable


def make_field(config: SynthConfig = SynthConfig()) -> SyntheticField:
    grid = synth_grid(config)
    truth = generate_field(config, grid)
    fluids = FluidProps(config.mu_o, config.mu_w, config.mu_liq)
    table = default_relperm()
    wells = sample_wells(truth, config, fluids, table)
    return SyntheticField(config, grid, truth, tuple(wells), synthesize_seismic(truth, config),
                          fluids, table)


def write_field(field: SyntheticField, out_dir) -> dict:
    """Write every ingest-format file plus ``truth_map.csv``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "grid": out / "grid.json",
        "wells": out / "wells.csv",
        "relperm": out / "relperm.csv",
        "fluids": out / "fluids.json",
        "seismic": out / "seismic.json",
        "horizon": out / "horizon.csv",
        "truth": out / "truth_map.csv",
        "config": out / "synth.json",
    }
    save_grid(field.grid, paths["grid"])
    write_wells(field.wells, paths["wells"])
    save_relperm(field.relperm, paths["relperm"])
    save_fluids(field.fluids, paths["fluids"])
    save_seismic(field.volume, paths["seismic"], paths["horizon"])
    save_map(field.truth, paths["truth"])
    paths["config"].write_text(json.dumps(field.config.to_dict(), indent=2) + "\n")
    return {k: str(v) for k, v in paths.items()}
