"""Command-line driver: ``shippcc <subcommand> [--config FILE] [--seed N] ...``.

Every subcommand writes into ``<out>/<subcommand>-<hash>`` where the hash
covers everything that determines the results, so reruns of one
configuration land in the same directory and are checked byte for byte.

Exit codes: 0 success, 1 stage failure, 2 configuration or I/O error,
3 a rerun produced results that differ from an existing run directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from . import plant
from .control import load_profile
from .datagen import Scenario
from .experiments import (
    STUDIES, ControlConfig, Pipeline, RunConfig, RunConflictError, StageError, Store,
    _build, _plain, caseI_modeling, caseII_modeling, config_from_dict, control_comparison, digest, rows_to_csv,
    run_study, write_run,
)
from .integrator import IntegratorConfig, StepFailure, nominal_steady_state, simulate_open_loop
from .neural import save_model

log = logging.getLogger("shippcc")

EXIT_OK, EXIT_STAGE, EXIT_CONFIG, EXIT_CONFLICT = 0, 1, 2, 3


@dataclass(frozen=True)
class SimulateConfig:
    steps: int = 100
    u: tuple = tuple(plant.U_NOMINAL)  # held constant
    p: float = plant.P_NOMINAL  # constant load unless load_profile is set
    load_profile: bool = False
    profile_seed: int = 0
    profile_hold: int = 200
    load_range: tuple = (0.4, 0.7)


@dataclass(frozen=True)
class Settings:
    run: RunConfig
    simulate: SimulateConfig
    raw: dict


def read_settings(path: str | None) -> Settings:
    """Parse the YAML config; a missing file raises FileNotFoundError naming the path."""
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        raw = yaml.safe_load(p.read_text()) or {}
        if not isinstance(raw, dict):
            raise ValueError(f"config file {p} must hold a mapping at the top level")
    d = dict(raw)
    sim = _build(SimulateConfig, d.pop("simulate", None), "simulate")
    return Settings(config_from_dict(d), sim, raw)


def _with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    return cfg if seed is None else replace(cfg, seeds=(int(seed),))


def _write_files(run: Path, files: dict, manifest: dict) -> Path:
    """Write text files, refusing to overwrite differing content."""
    for name, text in files.items():
        f = run / name
        if f.is_file() and f.read_text() != text:
            raise RunConflictError(f"{f} differs from the new result for hash {manifest['config_hash']}")
    run.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (run / name).write_text(text)
    (run / "manifest.json").write_text(json.dumps(_plain(manifest), indent=1, sort_keys=True) + "\n")
    return run


# ---------------------------------------------------------------- subcommands

def trajectory_csv(tr) -> str:
    """One row per instant (N + 1 rows); inputs on the last row repeat the last applied input."""
    N = tr.n_steps
    u = np.concatenate([tr.u, tr.u[-1:]]) if N else np.full((1, plant.NU), np.nan)
    p = np.concatenate([tr.p, tr.p[-1:]]) if N else np.full(1, np.nan)
    header = (["k", "t", "p", "F_L", "F_fuel", "F_sw", "F_CO2", "T_reb"]
              + [f"x{i + 1}" for i in range(plant.NX)] + [f"z{i + 1}" for i in range(plant.NZ)])
    rows = [[k, tr.t[k], p[k], *u[k], *tr.y[k], *tr.x[k], *tr.z[k]] for k in range(N + 1)]
    return rows_to_csv(header, rows)


def cmd_simulate(s: Settings, args) -> Path:
    sc = s.simulate
    if sc.steps < 0:
        raise ValueError("simulate.steps must be non-negative")
    if len(sc.u) != plant.NU:
        raise ValueError(f"simulate.u needs {plant.NU} entries")
    params = s.run.params(args.param_set)
    seed = sc.profile_seed if args.seed is None else int(args.seed)
    key = {"simulate": _plain(replace(sc, profile_seed=seed)), "param_set": args.param_set,
           "plant": s.run.plant}
    h = digest(key)
    out = Path(args.out)
    x0, z0 = nominal_steady_state(params, cache_dir=out / "cache")
    u = np.tile(np.asarray(sc.u, float), (sc.steps, 1))
    if sc.load_profile:
        p = load_profile(sc.steps, seed, sc.profile_hold, *sc.load_range)
    else:
        p = np.full(sc.steps, float(sc.p))
    try:
        tr = simulate_open_loop(params, x0, u, p, IntegratorConfig(), z0=z0)
    except StepFailure as exc:
        raise StageError("simulate", seed, exc) from exc
    run = out / f"simulate-{h}"
    _write_files(run, {"trajectory.csv": trajectory_csv(tr)},
                 {"command": "simulate", "config_hash": h, "seed": seed, "param_set": args.param_set,
                  "steps": sc.steps, "rows": sc.steps + 1, **key})
    np.savez(run / "trajectory.npz", x=tr.x, z=tr.z, y=tr.y, u=tr.u, p=tr.p)
    return run


def cmd_gen_data(s: Settings, args) -> Path:
    cfg = s.run
    seed = cfg.seeds[0] if args.seed is None else int(args.seed)
    n = args.size or cfg.data.n_samples
    Scenario.from_name(args.scenario)  # fail fast on a bad name
    out = Path(args.out)
    pipe = Pipeline(cfg, Store(out / "cache"), progress=log.info)
    ds = pipe.dataset(args.scenario, n, seed)
    key = pipe.dataset_key(args.scenario, n, seed)
    h = digest(key)
    run = out / f"gen-data-{h}"
    run.mkdir(parents=True, exist_ok=True)
    ds.save(run / "dataset")
    _write_files(run, {}, {"command": "gen-data", "config_hash": h, "seed": seed, **key})
    return run


def cmd_train(s: Settings, args) -> Path:
    cfg = s.run
    seed = cfg.seeds[0] if args.seed is None else int(args.seed)
    n = cfg.data.n_samples
    size = args.size or n
    out = Path(args.out)
    pipe = Pipeline(cfg, Store(out / "cache"), progress=log.info)
    key = {"model": args.model, "scenario": args.scenario, "size": size, "seed": seed,
           "train": _plain(replace(cfg.train, seed=seed)), "dataset": pipe.dataset_key(args.scenario, n, seed)}
    h = digest(key)
    run = out / f"train-{h}"
    if args.model == "hybrid":
        m = pipe.hybrid(args.scenario, size, seed)
        save_model(run / "inference", m.inference, m.stats, key)
        save_model(run / "compensation", m.compensation, m.stats, key)
    else:
        net, stats = pipe.blackbox(args.scenario, size, seed, args.model)
        save_model(run / args.model, net, stats, key)
    _write_files(run, {}, {"command": "train", "config_hash": h, **key})
    return run


def cmd_evaluate(s: Settings, args) -> Path:
    cfg = _with_seed(s.run, args.seed)
    store = Store(Path(args.out) / "cache")
    if args.scenario in ("caseI", "case1"):
        return write_run(Path(args.out), "evaluate-caseI", cfg, caseI_modeling(cfg, store, args.workers))
    if args.scenario in ("caseII", "case2"):
        return write_run(Path(args.out), "evaluate-caseII", cfg, caseII_modeling(cfg, store, args.workers))
    raise ValueError(f"evaluate supports scenarios caseI and caseII, got {args.scenario!r}")


def cmd_control(s: Settings, args) -> Path:
    cfg = s.run
    cc: ControlConfig = cfg.control
    if args.seed is not None:
        cc = replace(cc, profile_seed=int(args.seed))
    cc = replace(cc, models=(args.model,) if args.model else cc.models,
                 controllers=(args.controller,) if args.controller else cc.controllers)
    cfg = replace(cfg, control=cc)
    result = control_comparison(cfg, Store(Path(args.out) / "cache"), args.workers)
    return write_run(Path(args.out), "control", cfg, result)


def cmd_experiment(s: Settings, args) -> Path:
    cfg = _with_seed(s.run, args.seed)
    run, _ = run_study(args.which, cfg, args.out, args.workers)
    return run


COMMANDS = {"simulate": cmd_simulate, "gen-data": cmd_gen_data, "train": cmd_train,
            "evaluate": cmd_evaluate, "control": cmd_control, "experiment": cmd_experiment}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="overrides the configured seed(s)")
    common.add_argument("--param-set", choices=("truth", "imperfect"), default="truth",
                        help="plant parameter set for simulate")
    common.add_argument("--workers", type=int, default=1, help="process count for per-seed stages")
    common.add_argument("--out", default="runs", help="output root directory")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="shippcc", description="Ship carbon-capture simulation, learning and control.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="open-loop plant simulation")
    for name, help_ in (("gen-data", "build a training dataset"), ("train", "train a model")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--scenario", default="caseI", help="caseI, caseII, condition1, condition2 or condition3")
        p.add_argument("--size", type=int, help="number of records (defaults to data.n_samples)")
        if name == "train":
            p.add_argument("--model", choices=("hybrid", "NN1", "NN2"), default="hybrid")
    p = sub.add_parser("evaluate", parents=[common], help="rollout MSE of trained models on held-out data")
    p.add_argument("--scenario", default="caseI", choices=("caseI", "caseII"))
    p = sub.add_parser("control", parents=[common], help="closed-loop control runs")
    p.add_argument("--controller", choices=("EMPC", "MPC"))
    p.add_argument("--model", choices=("hybrid", "imperfect", "truth"))
    p = sub.add_parser("experiment", parents=[common], help="run a named study")
    p.add_argument("which", choices=STUDIES)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        settings = read_settings(args.config)
        run = COMMANDS[args.command](settings, args)
    except (FileNotFoundError, ValueError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunConflictError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFLICT
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(run)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
