"""Four-stage workflow: preprocessing, pure fusion, seismic CNN, complete fusion.

Also the well-exclusion ablation, percentage difference maps and the report
bundle. Every stage is a pure function of its inputs, configuration and seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import Grid, GridMap, KernelParams, load_map, load_params, save_map, save_params
from .fusion import FusionResult, fuse_map
from .ingest import FluidProps, SeismicVolume, convert_wells
from .optimize import Bounds, DEConfig, KernelFit, LoocvProblem, fit_kernel, metrics
from .preprocess import transform_wells
from .seismic import (Architecture, SeismicNet, TrainConfig, build_training_set, load_checkpoint,
                      predict_map, save_checkpoint, train)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    bounds: Bounds = field(default_factory=Bounds)
    de: DEConfig = field(default_factory=DEConfig)
    arch: Architecture = field(default_factory=Architecture)
    training: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))
    percentile: float = 0.5
    qq_mode: Optional[str] = "match-welltest"
    default_s_w: float = 0.45
    warm_start: bool = False
    q_lo: float = 0.1
    q_hi: float = 0.9
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "bounds": self.bounds.to_dict(),
            "de": asdict(self.de),
            "arch": self.arch.to_dict(),
            "training": self.training.to_dict(),
            "percentile": self.percentile,
            "qq_mode": self.qq_mode,
            "default_s_w": self.default_s_w,
            "warm_start": self.warm_start,
            "q_lo": self.q_lo,
            "q_hi": self.q_hi,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        kw = {}
        if "bounds" in d:
            kw["bounds"] = Bounds.from_dict(d.pop("bounds"))
        if "de" in d:
            kw["de"] = DEConfig(**d.pop("de"))
        if "arch" in d:
            kw["arch"] = Architecture.from_dict(d.pop("arch"))
        if "training" in d:
            kw["training"] = TrainConfig(**d.pop("training"))
        kw.update(d)
        return cls(**kw)

    def seeded(self) -> "RunConfig":
        """Config whose optimizer and training seeds follow ``seed``."""
        return RunConfig(self.bounds, self.de.replace(seed=self.seed), self.arch,
                         TrainConfig(**{**self.training.to_dict(), "seed": self.seed}),
                         self.percentile, self.qq_mode, self.default_s_w, self.warm_start,
                         self.q_lo, self.q_hi, self.seed)


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def prepare_wells(wells, config: RunConfig = RunConfig(), fluids: Optional[FluidProps] = None,
                  relperm=None) -> list:
    """Stage 1: effective-to-absolute conversion (when fluids are given) and Q-Q."""
    wells = list(wells)
    if fluids is not None and relperm is not None:
        wells = convert_wells(wells, fluids, relperm, config.default_s_w)
    if config.qq_mode:
        wells = transform_wells(wells, config.qq_mode)
    return wells


@dataclass
class FusionStage:
    fit: KernelFit
    result: FusionResult

    @property
    def params(self) -> KernelParams:
        return self.fit.params

    @property
    def metrics(self) -> dict:
        return self.fit.metrics

    @property
    def perm_map(self) -> GridMap:
        return self.result.perm_map

    @property
    def confidence_map(self) -> GridMap:
        return self.result.confidence_map


@dataclass
class SeismicStage:
    net: SeismicNet
    seismic_map: GridMap
    history: list
    n_train: int


def run_pure_fusion(wells, grid: Grid, config: RunConfig = RunConfig()) -> FusionStage:
    """Stage 2: optimize kernels without seismic and fuse the map."""
    cfg = config.seeded()
    fit = fit_kernel(wells, grid, None, cfg.bounds, cfg.de)
    return FusionStage(fit, fuse_map(wells, None, fit.params, grid))


def run_seismic(pure: FusionStage, volume: SeismicVolume, grid: Grid,
                config: RunConfig = RunConfig()) -> SeismicStage:
    """Stage 3: expand the training set from high-confidence points, train, infer."""
    cfg = config.seeded()
    samples = build_training_set(pure.confidence_map, pure.perm_map, volume, cfg.percentile,
                                 tuple(cfg.arch.cube_shape))
    net = SeismicNet(cfg.arch, seed=cfg.seed)
    res = train(net, samples, cfg.training, grid)
    return SeismicStage(res.net, predict_map(res.net, volume, grid), res.history, len(samples))


def run_complete_fusion(wells, grid: Grid, pure: FusionStage, seismic_map: GridMap,
                        config: RunConfig = RunConfig()) -> FusionStage:
    """Stage 4: re-optimize all seven constants with the seismic map and fuse."""
    cfg = config.seeded()
    warm = pure.params if cfg.warm_start else None
    fit = fit_kernel(wells, grid, seismic_map, cfg.bounds, cfg.de, warm_start=warm)
    return FusionStage(fit, fuse_map(wells, seismic_map, fit.params, grid))


def percentage_diff_map(a: GridMap, b: GridMap) -> GridMap:
    """``100 * (a - b) / b`` per point, in linear mD (inputs are log10 maps)."""
    if a.grid is not b.grid and not np.array_equal(a.grid.points, b.grid.points):
        raise ValueError("maps must share a grid")
    la, lb = a.linear(), b.linear()
    bad = np.flatnonzero(lb == 0)
    if bad.size:
        raise ValueError(f"zero denominator at indices {bad.tolist()}")
    return GridMap(a.grid, 100.0 * (la - lb) / lb, "difference")


@dataclass
class WorkflowResult:
    wells: list
    pure: FusionStage
    seismic: Optional[SeismicStage] = None
    complete: Optional[FusionStage] = None
    config: RunConfig = field(default_factory=RunConfig)

    def diff_map(self) -> GridMap:
        """Complete versus pure fusion, percent."""
        return percentage_diff_map(self.complete.perm_map, self.pure.perm_map)


def _stage_dir(out_dir, name):
    if out_dir is None:
        return None
    d = Path(out_dir) / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _save_fusion(stage: FusionStage, d: Path):
    save_params(stage.params, d / "params.json")
    save_map(stage.perm_map, d / "perm_map.csv")
    save_map(stage.confidence_map, d / "confidence_map.csv")
    with open(d / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "best_objective"])
        for i, f in enumerate(stage.fit.history):
            w.writerow([i, repr(f)])
    (d / "metrics.json").write_text(json.dumps(
        {**stage.metrics, "objective": stage.fit.objective}, indent=2) + "\n")


def _load_fusion(d: Path, wells, grid, seismic_map, config) -> FusionStage:
    params = load_params(d / "params.json")
    problem = LoocvProblem(wells, grid, seismic_map, config.de)
    k, k_hat = problem.synthetic_tests(params)
    saved = json.loads((d / "metrics.json").read_text())
    hist = np.loadtxt(d / "history.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1].tolist()
    fit = KernelFit(params, saved["objective"], hist, k, k_hat, metrics(k, k_hat))
    return FusionStage(fit, fuse_map(wells, seismic_map, params, grid))


def run_workflow(wells, grid: Grid, volume: Optional[SeismicVolume] = None,
                 config: RunConfig = RunConfig(), out_dir=None, resume: bool = False,
                 prepared: bool = False, fluids=None, relperm=None) -> WorkflowResult:
    """Run every stage in order.

    With ``out_dir`` each stage persists its artifacts in a subdirectory;
    with ``resume`` a stage whose artifacts already exist is loaded instead
    of recomputed. Pass ``prepared=True`` when ``wells`` already went
    through ``prepare_wells``.
    """
    if not prepared:
        wells = prepare_wells(wells, config, fluids, relperm)
    d = _stage_dir(out_dir, "pure")
    if resume and d is not None and (d / "metrics.json").exists():
        pure = _load_fusion(d, wells, grid, None, config)
    else:
        pure = run_pure_fusion(wells, grid, config)
        if d is not None:
            _save_fusion(pure, d)
    result = WorkflowResult(wells, pure, config=config)
    if volume is None:
        return result

    d = _stage_dir(out_dir, "seismic")
    if resume and d is not None and (d / "seismic_map.csv").exists():
        net = load_checkpoint(d / "model")
        smap = load_map(d / "seismic_map.csv", grid)
        hist = json.loads((d / "history.json").read_text())
        result.seismic = SeismicStage(net, smap, hist["history"], hist["n_train"])
    else:
        result.seismic = run_seismic(pure, volume, grid, config)
        if d is not None:
            save_checkpoint(result.seismic.net, d / "model")
            save_map(result.seismic.seismic_map, d / "seismic_map.csv")
            (d / "history.json").write_text(json.dumps(
                {"n_train": result.seismic.n_train, "history": result.seismic.history}) + "\n")

    d = _stage_dir(out_dir, "complete")
    if resume and d is not None and (d / "metrics.json").exists():
        result.complete = _load_fusion(d, wells, grid, result.seismic.seismic_map, config)
    else:
        result.complete = run_complete_fusion(wells, grid, pure, result.seismic.seismic_map, config)
        if d is not None:
            _save_fusion(result.complete, d)
    return result


def select_exclusions(wells, q_lo: float = 0.1, q_hi: float = 0.9) -> list:
    """Ids of wells whose interpreted log10 permeability lies below ``q_lo`` or above ``q_hi``."""
    usable = [w for w in wells if w.usable]
    vals = np.log10([w.interpreted for w in usable])
    lo, hi = np.quantile(vals, [q_lo, q_hi])
    return [w.id for w, v in zip(usable, vals) if v < lo or v > hi]


@dataclass
class AblationResult:
    excluded: list
    baseline: WorkflowResult
    ablated: WorkflowResult
    diff_map: GridMap
    pure_diff_map: GridMap
    table: dict


def metrics_table(all_run: WorkflowResult, excluded_run: Optional[WorkflowResult] = None) -> dict:
    """Nested dict ``{metric: {column: value}}`` with columns
    pure_all, pure_excluded, complete_all, complete_excluded."""
    cols = {}
    for tag, run in (("all", all_run), ("excluded", excluded_run)):
        if run is None:
            continue
        cols[f"pure_{tag}"] = run.pure.metrics
        if run.complete is not None:
            cols[f"complete_{tag}"] = run.complete.metrics
    order = ["pure_all", "pure_excluded", "complete_all", "complete_excluded"]
    return {m: {c: cols[c][m] if c in cols else None for c in order} for m in ("mse", "r2")}


def ablation_study(wells, grid: Grid, volume: Optional[SeismicVolume], config: RunConfig = RunConfig(),
                   exclusion=None, baseline: Optional[WorkflowResult] = None) -> AblationResult:
    """Repeat the whole workflow without the excluded wells.

    ``exclusion`` is a list of well ids, or ``None`` for the quantile rule
    (``config.q_lo`` / ``config.q_hi``). ``wells`` must already be prepared.
    """
    ids = select_exclusions(wells, config.q_lo, config.q_hi) if exclusion is None else list(exclusion)
    known = {w.id for w in wells}
    missing = set(ids) - known
    if missing:
        raise ValueError(f"unknown well ids {sorted(missing)}")
    remaining = [w for w in wells if w.id not in set(ids)]
    if sum(w.usable for w in remaining) < 3:
        raise ValueError("too few remaining wells: need >= 3 after exclusion")
    if baseline is None:
        baseline = run_workflow(wells, grid, volume, config, prepared=True)
    if not ids:
        ablated = baseline
    else:
        # excluded wells leave the Q-Q reference sample too
        remaining = transform_wells(remaining, config.qq_mode) if config.qq_mode else remaining
        ablated = run_workflow(remaining, grid, volume, config, prepared=True)
    final_all = baseline.complete or baseline.pure
    final_ex = ablated.complete or ablated.pure
    return AblationResult(
        excluded=ids, baseline=baseline, ablated=ablated,
        diff_map=percentage_diff_map(final_ex.perm_map, final_all.perm_map),
        pure_diff_map=percentage_diff_map(ablated.pure.perm_map, baseline.pure.perm_map),
        table=metrics_table(baseline, ablated),
    )


def report(results, out_dir, config: Optional[RunConfig] = None) -> dict:
    """Write metrics table, maps, parameters and a plain-text summary.

    ``results`` is a ``WorkflowResult`` or an ``AblationResult``.
    """
    if results is None:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if isinstance(results, AblationResult):
        run, table = results.baseline, results.table
        extra_maps = {"ablation_diff_map": results.diff_map,
                      "ablation_pure_diff_map": results.pure_diff_map,
                      "excluded_pure_perm_map": results.ablated.pure.perm_map}
        if results.ablated.complete is not None:
            extra_maps["excluded_complete_perm_map"] = results.ablated.complete.perm_map
    elif isinstance(results, WorkflowResult):
        run, table, extra_maps = results, metrics_table(results), {}
    else:
        raise TypeError(f"cannot report {type(results).__name__}")
    config = config or run.config

    paths = {}
    p = out / "metrics.csv"
    cols = ["pure_all", "pure_excluded", "complete_all", "complete_excluded"]
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric"] + cols)
        for m, row in table.items():
            w.writerow([m] + ["" if row[c] is None else f"{row[c]:.6g}" for c in cols])
    paths["metrics"] = p

    maps = {"pure_perm_map": run.pure.perm_map, "pure_confidence_map": run.pure.confidence_map}
    params = {"pure": run.pure.params.to_dict()}
    if run.seismic is not None:
        maps["seismic_map"] = run.seismic.seismic_map
    if run.complete is not None:
        maps["complete_perm_map"] = run.complete.perm_map
        maps["complete_confidence_map"] = run.complete.confidence_map
        maps["complete_vs_pure_diff_map"] = run.diff_map()
        params["complete"] = run.complete.params.to_dict()
    if isinstance(results, AblationResult):
        params["excluded_wells"] = results.excluded
        params["pure_excluded"] = results.ablated.pure.params.to_dict()
        if results.ablated.complete is not None:
            params["complete_excluded"] = results.ablated.complete.params.to_dict()
    maps.update(extra_maps)
    for name, gmap in maps.items():
        p = out / f"{name}.csv"
        save_map(gmap, p)
        paths[name] = p
    p = out / "params.json"
    p.write_text(json.dumps(params, indent=2) + "\n")
    paths["params"] = p

    lines = [
        f"config_hash: {config_hash(config)}",
        f"seed: {config.seed}",
        f"wells: {sum(w.usable for w in run.wells)} usable of {len(run.wells)}",
        f"grid_points: {run.pure.perm_map.grid.n}",
    ]
    if run.seismic is not None:
        lines.append(f"seismic_training_samples: {run.seismic.n_train}")
    for m, row in table.items():
        lines.append(f"{m}: " + ", ".join(f"{c}={v:.4g}" for c, v in row.items() if v is not None))
    p = out / "summary.txt"
    p.write_text("\n".join(lines) + "\n")
    paths["summary"] = p
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    paths["config"] = out / "config.json"
    return {k: str(v) for k, v in paths.items()}
