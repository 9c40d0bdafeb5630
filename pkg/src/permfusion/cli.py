"""Command-line entry point: ``permfusion <subcommand> [--config run.json] [flags]``.

Every subcommand reads an optional JSON run-config whose top-level keys are
file paths (``wells``, ``grid``, ``relperm``, ``fluids``, ``seismic``,
``horizon``, ``params``, ``seismic_map``, ``perm_map``, ``confidence_map``,
``model``, ``bounds``, ``de``, ``out``) plus a ``run`` section holding
workflow settings and, for ``synth``, a ``synth`` section. Command-line
flags override config entries. Results are reported as one JSON object on
stdout; failures print ``{"error": ..., "type": ...}`` and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .domain import load_grid, load_map, load_params, save_map, save_params
from .fusion import fuse_map
from .ingest import (availability_counts, convert_wells, load_fluids, load_relperm, load_seismic,
                     parse_wells, write_wells)
from .optimize import fit_kernel
from .pipeline import RunConfig, ablation_study, config_hash, prepare_wells, report, run_workflow
from .preprocess import transform_wells
from .seismic import (SeismicNet, build_training_set, load_checkpoint, predict_map,
                      save_checkpoint, train)
from .synthgen import SynthConfig, make_field, write_field

PATH_KEYS = ("wells", "grid", "relperm", "fluids", "seismic", "horizon", "params", "seismic_map",
             "perm_map", "confidence_map", "model", "bounds", "de", "out")


class CliError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    cfg = json.loads(Path(path).read_text())
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object")
    return cfg


def _settings(args) -> dict:
    """Config file merged with explicit flags (flags win)."""
    cfg = _load_config(args.config)
    for key in PATH_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    return cfg


def _need(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise CliError("missing required setting(s): " + ", ".join(missing))
    return [cfg[k] for k in keys]


def _run_config(cfg, args) -> RunConfig:
    run = dict(cfg.get("run", {}))
    if cfg.get("bounds"):
        run["bounds"] = json.loads(Path(cfg["bounds"]).read_text())
    if cfg.get("de"):
        run["de"] = json.loads(Path(cfg["de"]).read_text())
    for flag in ("seed", "percentile", "qq_mode", "epochs", "n_iter", "popsize"):
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag == "epochs":
            run["training"] = {**run.get("training", {}), "epochs": v}
        elif flag in ("n_iter", "popsize"):
            run["de"] = {**run.get("de", {}), flag: v}
        else:
            run[flag] = v
    if getattr(args, "warm_start", False):
        run["warm_start"] = True
    return RunConfig.from_dict(run)


def _relperm(spec):
    if isinstance(spec, dict):
        return {rock: load_relperm(p, rock) for rock, p in spec.items()}
    return load_relperm(spec)


def _out_dir(cfg) -> Path:
    (out,) = _need(cfg, "out")
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _volume(cfg, grid=None):
    seis, hor = _need(cfg, "seismic", "horizon")
    return load_seismic(seis, hor, grid)


def _wells_and_grid(cfg):
    wells_path, grid_path = _need(cfg, "wells", "grid")
    return parse_wells(wells_path), load_grid(grid_path)


def _write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generation", "best_objective"])
        for i, f in enumerate(history):
            w.writerow([i, repr(f)])


# ---- subcommands ------------------------------------------------------------

def cmd_ingest(args, cfg):
    wells_path, = _need(cfg, "wells")
    wells = parse_wells(wells_path)
    result = {"wells": len(wells), "counts": dict(zip(("both", "wl_only", "wt_only", "neither"),
                                                       availability_counts(wells)))}
    if cfg.get("fluids") and cfg.get("relperm"):
        run = _run_config(cfg, args)
        wells = convert_wells(wells, load_fluids(cfg["fluids"]), _relperm(cfg["relperm"]), run.default_s_w)
        result["converted"] = sum(w.k_wt_absolute is not None for w in wells)
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.parent.mkdir(parents=True, exist_ok=True)
        write_wells(wells, out)
        result["output"] = str(out)
    return result


def cmd_qq_transform(args, cfg):
    wells_path, out = _need(cfg, "wells", "out")
    wells = transform_wells(parse_wells(wells_path), args.mode)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_wells(wells, out)
    return {"output": str(out), "transformed": sum(w.k_wl_qq is not None for w in wells), "mode": args.mode}


def cmd_fuse(args, cfg):
    wells, grid = _wells_and_grid(cfg)
    (params_path,) = _need(cfg, "params")
    params = load_params(params_path)
    smap = load_map(cfg["seismic_map"], grid) if cfg.get("seismic_map") else None
    res = fuse_map(wells, smap, params, grid)
    out = _out_dir(cfg)
    save_map(res.perm_map, out / "perm_map.csv")
    save_map(res.confidence_map, out / "confidence_map.csv")
    return {"perm_map": str(out / "perm_map.csv"), "confidence_map": str(out / "confidence_map.csv"),
            "used_seismic": res.used_seismic}


def _optimize(args, cfg, require_seismic):
    wells, grid = _wells_and_grid(cfg)
    run = _run_config(cfg, args).seeded()
    if require_seismic:
        _need(cfg, "seismic_map")
    smap = load_map(cfg["seismic_map"], grid) if cfg.get("seismic_map") else None
    warm = load_params(cfg["params"]) if run.warm_start and cfg.get("params") else None
    fit = fit_kernel(wells, grid, smap, run.bounds, run.de, warm_start=warm)
    out = _out_dir(cfg)
    save_params(fit.params, out / "params.json")
    _write_history(fit.history, out / "history.csv")
    result = {"params": fit.params.to_dict(), "objective": fit.objective, "metrics": fit.metrics,
              "output": str(out)}
    if require_seismic:
        res = fuse_map(wells, smap, fit.params, grid)
        save_map(res.perm_map, out / "perm_map.csv")
        save_map(res.confidence_map, out / "confidence_map.csv")
    return result


def cmd_optimize(args, cfg):
    return _optimize(args, cfg, require_seismic=False)


def cmd_complete_fuse(args, cfg):
    return _optimize(args, cfg, require_seismic=True)


def cmd_train_seismic(args, cfg):
    grid_path, perm_path, conf_path = _need(cfg, "grid", "perm_map", "confidence_map")
    grid = load_grid(grid_path)
    fused = load_map(perm_path, grid)
    conf = load_map(conf_path, grid, kind="confidence")
    run = _run_config(cfg, args).seeded()
    vol = _volume(cfg, grid)
    samples = build_training_set(conf, fused, vol, run.percentile, tuple(run.arch.cube_shape))
    res = train(SeismicNet(run.arch, seed=run.seed), samples, run.training, grid)
    out = _out_dir(cfg)
    save_checkpoint(res.net, out / "model")
    (out / "history.json").write_text(json.dumps({"n_train": len(samples), "history": res.history}) + "\n")
    return {"model": str(out / "model"), "n_train": len(samples), "best_epoch": res.best_epoch,
            "final": res.history[res.best_epoch]}


def cmd_predict_seismic(args, cfg):
    grid_path, model = _need(cfg, "grid", "model")
    grid = load_grid(grid_path)
    smap = predict_map(load_checkpoint(model), _volume(cfg, grid), grid)
    out = _out_dir(cfg)
    save_map(smap, out / "seismic_map.csv")
    return {"seismic_map": str(out / "seismic_map.csv"), "flagged": len(smap.flagged)}


def _prepared_inputs(args, cfg):
    wells, grid = _wells_and_grid(cfg)
    run = _run_config(cfg, args)
    fluids = load_fluids(cfg["fluids"]) if cfg.get("fluids") else None
    relperm = _relperm(cfg["relperm"]) if cfg.get("relperm") else None
    wells = prepare_wells(wells, run, fluids, relperm)
    vol = _volume(cfg, grid) if cfg.get("seismic") else None
    return wells, grid, vol, run


def cmd_ablate(args, cfg):
    wells, grid, vol, run = _prepared_inputs(args, cfg)
    exclusion = args.exclude.split(",") if args.exclude else None
    res = ablation_study(wells, grid, vol, run, exclusion=exclusion)
    out = _out_dir(cfg)
    paths = report(res, out, run)
    return {"excluded": res.excluded, "metrics": res.table, "files": paths}


def cmd_report(args, cfg):
    wells, grid, vol, run = _prepared_inputs(args, cfg)
    out = _out_dir(cfg)
    res = run_workflow(wells, grid, vol, run, out_dir=out / "stages", resume=not args.fresh, prepared=True)
    paths = report(res, out, run)
    return {"config_hash": config_hash(run), "files": paths}


def cmd_synth(args, cfg):
    section = cfg.get("synth", {k: v for k, v in cfg.items() if k not in PATH_KEYS and k != "run"})
    if args.seed is not None:
        section = {**section, "seed": args.seed}
    field = make_field(SynthConfig.from_dict(section))
    paths = write_field(field, _out_dir(cfg))
    return {"files": paths, "wells": len(field.wells), "grid_points": field.grid.n}


COMMANDS = {
    "ingest": (cmd_ingest, "parse a well table and convert effective well-test permeability"),
    "qq-transform": (cmd_qq_transform, "fill the k_wl_qq column of a well table"),
    "fuse": (cmd_fuse, "fuse a permeability map from fixed kernel constants"),
    "optimize": (cmd_optimize, "train kernel constants by leave-one-out differential evolution"),
    "train-seismic": (cmd_train_seismic, "train the seismic network on high-confidence points"),
    "predict-seismic": (cmd_predict_seismic, "infer a seismic permeability map"),
    "complete-fuse": (cmd_complete_fuse, "re-optimize with the seismic map and fuse"),
    "ablate": (cmd_ablate, "repeat the workflow without extreme-permeability wells"),
    "report": (cmd_report, "run or resume the whole workflow and write the report bundle"),
    "synth": (cmd_synth, "generate a synthetic field in ingest formats"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="permfusion", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run-config")
        for key in PATH_KEYS:
            p.add_argument("--" + key.replace("_", "-"), dest=key)
        p.add_argument("--seed", type=int)
        if name in ("optimize", "complete-fuse", "ablate", "report"):
            p.add_argument("--n-iter", type=int, dest="n_iter")
            p.add_argument("--popsize", type=int)
        if name in ("train-seismic", "ablate", "report"):
            p.add_argument("--epochs", type=int)
            p.add_argument("--percentile", type=float)
        if name == "complete-fuse":
            p.add_argument("--warm-start", action="store_true", dest="warm_start",
                           help="seed the search with --params")
        if name == "qq-transform":
            p.add_argument("--mode", choices=("match-welltest", "log-normalize"), default="match-welltest")
        if name in ("ablate", "report"):
            p.add_argument("--qq-mode", dest="qq_mode", choices=("match-welltest", "log-normalize"))
        if name == "ablate":
            p.add_argument("--exclude", help="comma-separated well ids (default: quantile rule)")
        if name == "report":
            p.add_argument("--fresh", action="store_true", help="ignore persisted stage outputs")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    func = COMMANDS[args.command][0]
    try:
        result = func(args, _settings(args))
    except (CliError, ValueError, OSError, KeyError, TypeError, RuntimeError, FloatingPointError) as exc:
        json.dump({"error": str(exc), "type": type(exc).__name__, "command": args.command}, sys.stdout)
        sys.stdout.write("\n")
        return 1
    json.dump(result, sys.stdout, default=str)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
