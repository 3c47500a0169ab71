"""Experiment pipelines: datasets, trained models, rollout studies and closed-loop comparisons.

Every intermediate artifact (dataset, trained network) lives in a
content-addressed store keyed by the settings that produced it, so studies
sharing inputs reuse them and reruns are reproducible.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import plant
from .control import (
    CeConfig, EconomicConfig, FirstPrinciplesPredictor, HybridPredictor, closed_loop_run, compute_setpoint,
    economic_controller, load_profile, tracking_controller,
)
from .datagen import Dataset, NormStats, Scenario, build_dataset, split_and_normalize
from .hybrid import HybridModel, blackbox_rollout, hybrid_rollout, imperfect_rollout, rollout_mse
from .integrator import IntegratorConfig, nominal_steady_state, params_digest
from .neural import (
    Mlp, TrainConfig, load_model, save_model, train_blackbox_net, train_compensation_net, train_inference_net,
)
from .params import PlantParams, default_config, params_from_dict

log = logging.getLogger(__name__)

STUDIES = ("caseI-modeling", "caseII-modeling", "data-efficiency", "control-comparison")


class RunConflictError(RuntimeError):
    """A run directory already holds different results for the same configuration hash."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and seed."""

    def __init__(self, stage: str, seed, cause: BaseException):
        super().__init__(f"stage {stage!r} failed (seed {seed}): {cause!r}")
        self.stage = stage
        self.seed = seed
        self.cause = cause

    def __reduce__(self):
        return StageError, (self.stage, self.seed, self.cause)


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class DataConfig:
    n_samples: int = 20000  # records per training trajectory
    test_samples: int = 2000  # records per unseen-condition test trajectory
    rollout_steps: int = 1800
    test_seed_offset: int = 100  # unseen-condition trajectories use seed + offset


@dataclass(frozen=True)
class ModelingConfig:
    hybrid_sizes: tuple = (20000,)
    blackbox_sizes: tuple = ()
    blackbox_variant: str = "NN2"
    export_rollouts: bool = True


@dataclass(frozen=True)
class GeneralizationConfig:
    hybrid_size: int = 5000
    blackbox_size: int = 20000
    blackbox_variant: str = "NN1"
    conditions: tuple = ("condition1", "condition2", "condition3")


@dataclass(frozen=True)
class SetpointConfig:
    grid: int = 5
    rounds: int = 3
    settle_steps: int = 1000
    tol: float = 1e-6


@dataclass(frozen=True)
class ControlConfig:
    steps: int = 200  # controller calls
    hold: int = 10  # samples per controller call
    profile_seed: int = 0
    profile_hold: int = 200
    load_range: tuple = (0.4, 0.7)
    p_nominal: float = plant.P_NOMINAL
    model_seed: int = 0  # dataset seed of the hybrid model used in the loop
    models: tuple = ("hybrid", "imperfect")
    controllers: tuple = ("EMPC", "MPC")
    ce: CeConfig = CeConfig()
    economic: EconomicConfig = EconomicConfig()
    setpoint: SetpointConfig = SetpointConfig()


@dataclass(frozen=True)
class RunConfig:
    seeds: tuple = (0, 1, 2)
    data: DataConfig = DataConfig()
    train: TrainConfig = TrainConfig()
    modeling: ModelingConfig = ModelingConfig()
    data_efficiency: ModelingConfig = ModelingConfig(hybrid_sizes=(5000,), blackbox_sizes=(20000,),
                                                     export_rollouts=False)
    generalization: GeneralizationConfig = GeneralizationConfig()
    control: ControlConfig = ControlConfig()
    plant: dict = field(default_factory=dict, hash=False, compare=False)

    def to_dict(self) -> dict:
        return _plain(self)

    def digest(self) -> str:
        return digest(self.to_dict())

    def params(self, param_set: str = "truth") -> PlantParams:
        return params_from_dict(_merge(default_config(), self.plant), param_set)


def _plain(obj):
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in (over or {}).items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _build(cls, data, path: str):
    """Dataclass from a mapping, rejecting unknown keys with the offending path."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValueError(f"config section {path!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown keys in config section {path!r}: {sorted(unknown)}")
    kw = {}
    defaults = cls()
    for k, v in data.items():
        cur = getattr(defaults, k)
        if is_dataclass(cur):
            kw[k] = _build(type(cur), v, f"{path}.{k}")
        elif isinstance(cur, tuple):
            kw[k] = tuple(_build(type(cur[0]), e, f"{path}.{k}") if cur and is_dataclass(cur[0]) else e
                          for e in (v if isinstance(v, (list, tuple)) else [v]))
        elif isinstance(cur, float) and isinstance(v, (int, float, str)):
            kw[k] = float(v)
        else:
            kw[k] = v
    return cls(**kw)


def config_from_dict(d: dict | None) -> RunConfig:
    d = dict(d or {})
    plant_cfg = d.pop("plant", None) or {}
    cfg = _build(RunConfig, d, "config")
    return replace(cfg, plant=plant_cfg)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return config_from_dict(yaml.safe_load(path.read_text()) or {})


def digest(obj) -> str:
    blob = json.dumps(_plain(obj), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------- artifact store

class Store:
    """Content-addressed artifacts under ``root/<kind>/<digest>``."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, kind: str, key: dict) -> Path:
        return self.root / kind / digest(key)

    def exists(self, kind: str, key: dict, suffix: str = ".npz") -> bool:
        return self.path(kind, key).with_suffix(suffix).is_file()


def _atomic_save(save: Callable[[Path], Path], target: Path) -> None:
    """Write through a private directory and move the files into place."""
    tmp = target.parent / f".tmp-{os.getpid()}-{target.name}"
    tmp.mkdir(parents=True, exist_ok=True)
    save(tmp / target.name)
    for f in sorted(tmp.iterdir()):
        os.replace(f, target.parent / f.name)
    tmp.rmdir()


class Pipeline:
    """Builds or loads datasets and trained models for one run configuration."""

    def __init__(self, cfg: RunConfig, store: Store, progress: Callable[[str], None] | None = None):
        self.cfg = cfg
        self.store = store
        self.truth = cfg.params("truth")
        self.imperfect = cfg.params("imperfect")
        self.icfg = IntegratorConfig()
        self.progress = progress or (lambda msg: log.info(msg))

    # datasets
    def dataset_key(self, scenario: str, n: int, seed: int) -> dict:
        return {"scenario": scenario, "n": int(n), "seed": int(seed),
                "truth": params_digest(self.truth, self.icfg), "imperfect": params_digest(self.imperfect, self.icfg)}

    def dataset(self, scenario: str, n: int, seed: int) -> Dataset:
        key = self.dataset_key(scenario, n, seed)
        path = self.store.path("datasets", key)
        if path.with_suffix(".npz").is_file():
            return Dataset.load(path)
        self.progress(f"building dataset {scenario} n={n} seed={seed}")
        try:
            ds = build_dataset(Scenario.from_name(scenario, seed), n, self.truth, self.imperfect, self.icfg)
        except Exception as exc:
            raise StageError("gen-data", seed, exc) from exc
        ds = split_and_normalize(ds)
        ds.manifest["key"] = key
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_save(ds.save, path)
        return Dataset.load(path)

    # models
    def _train(self, kind: str, key: dict, fit: Callable[[], tuple[Mlp, NormStats, dict]]):
        path = self.store.path(kind, key).with_suffix(".npz")
        if not path.is_file():
            model, stats, info = fit()
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + f".tmp{os.getpid()}.npz")
            save_model(tmp, model, stats, {**info, "key": key})
            os.replace(tmp, path)
        model, stats, man = load_model(path)
        return model, NormStats.from_dict(stats), man

    def _subset(self, scenario: str, size: int, seed: int) -> tuple[Dataset, dict]:
        n = self.cfg.data.n_samples
        if size > n:
            raise ValueError(f"training size {size} exceeds the dataset size {n}")
        ds = self.dataset(scenario, n, seed)
        sub = ds if size == n else split_and_normalize(ds.head(size))
        return sub, {"dataset": self.dataset_key(scenario, n, seed), "size": int(size)}

    def hybrid(self, scenario: str, size: int, seed: int) -> HybridModel:
        tc = replace(self.cfg.train, seed=seed)
        base = {"scenario": scenario, "size": int(size), "seed": int(seed), "train": _plain(tc),
                "dataset": self.dataset_key(scenario, self.cfg.data.n_samples, seed)}

        def fit(which):
            def run():
                sub, _ = self._subset(scenario, size, seed)
                self.progress(f"training {which} net ({scenario}, n={size}, seed={seed})")
                try:
                    res = (train_inference_net if which == "inference" else train_compensation_net)(sub, tc)
                except Exception as exc:
                    raise StageError(f"train-{which}", seed, exc) from exc
                info = {"best_epoch": res.best_epoch, "best_val_mse": res.best_val,
                        "train_mse": res.train_mse, "val_mse": res.val_mse}
                return res.model, sub.stats, info
            return run

        inf, stats, _ = self._train("inference", base, fit("inference"))
        comp, _, _ = self._train("compensation", base, fit("compensation"))
        return HybridModel(self.imperfect, inf, comp, stats)

    def blackbox(self, scenario: str, size: int, seed: int, variant: str) -> tuple[Mlp, NormStats]:
        tc = replace(self.cfg.train, seed=seed)
        key = {"scenario": scenario, "size": int(size), "seed": int(seed), "variant": variant, "train": _plain(tc),
               "dataset": self.dataset_key(scenario, self.cfg.data.n_samples, seed)}

        def run():
            sub, _ = self._subset(scenario, size, seed)
            self.progress(f"training {variant} ({scenario}, n={size}, seed={seed})")
            try:
                res = train_blackbox_net(sub, variant, tc)
            except Exception as exc:
                raise StageError(f"train-{variant}", seed, exc) from exc
            return res.model, sub.stats, {"best_epoch": res.best_epoch, "best_val_mse": res.best_val,
                                          "train_mse": res.train_mse, "val_mse": res.val_mse}

        model, stats, _ = self._train("blackbox", key, run)
        return model, stats


# ---------------------------------------------------------------- rollout evaluation

@dataclass
class Segment:
    """A ground-truth stretch to predict: the start state and the applied inputs."""

    x: np.ndarray  # (L + 1, NX)
    z: np.ndarray
    u: np.ndarray  # (L, NU)
    p: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset, start: int, length: int) -> "Segment":
        length = min(length, len(ds) - start)
        if length < 1:
            raise ValueError("empty evaluation segment")
        x = np.concatenate([ds.x[start:start + length], ds.x_next[start + length - 1:start + length]])
        z = np.concatenate([ds.z[start:start + length], ds.z_next[start + length - 1:start + length]])
        return cls(x, z, ds.u[start:start + length], ds.p[start:start + length])


def predict_segment(pipe: Pipeline, model, seg: Segment):
    """Rollout of one model family over a segment; ``model`` is a HybridModel, ``(Mlp, NormStats)`` or ``"imperfect"``."""
    if isinstance(model, HybridModel):
        return hybrid_rollout(model, seg.x[0], seg.u, seg.p)
    if model == "imperfect":
        return imperfect_rollout(pipe.imperfect, seg.x[0], seg.u, seg.p, z0=seg.z[0])
    net, stats = model
    return blackbox_rollout(net, stats, seg.x[0], seg.z[0], seg.u, seg.p, engine=pipe.imperfect.engine)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return str(v)


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def rollout_csv(seg: Segment, preds: dict) -> str:
    """Long-format CSV: one row per (model, step) with every differential and algebraic state."""
    header = ["model", "step"] + [f"x{i + 1}" for i in range(plant.NX)] + [f"z{i + 1}" for i in range(plant.NZ)]
    rows = []
    for name, (xs, zs) in [("truth", (seg.x, seg.z))] + [(k, (v.x, v.z)) for k, v in preds.items()]:
        for k in range(len(xs)):
            rows.append([name, k, *xs[k], *zs[k]])
    return rows_to_csv(header, rows)


@dataclass
class StudyResult:
    """Report rows plus extra CSV files keyed by file name."""

    header: tuple
    rows: list
    files: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def report_csv(self) -> str:
        return rows_to_csv(self.header, self.rows)


MSE_HEADER = ("study", "seed", "condition", "model", "train_size", "mse_x", "mse_z")


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- studies

def _caseI_seed(args):
    cfg, root, seed = args
    pipe = Pipeline(cfg, Store(root))
    mc, n = cfg.modeling, cfg.data.n_samples
    ds = pipe.dataset("caseI", n, seed)
    seg = Segment.from_dataset(ds, ds.part("test").start, cfg.data.rollout_steps)
    preds, rows = {}, []
    for size in mc.hybrid_sizes:
        preds[f"hybrid-{size}"] = predict_segment(pipe, pipe.hybrid("caseI", size, seed), seg)
    for size in mc.blackbox_sizes:
        preds[f"{mc.blackbox_variant}-{size}"] = predict_segment(
            pipe, pipe.blackbox("caseI", size, seed, mc.blackbox_variant), seg)
    preds["imperfect"] = predict_segment(pipe, "imperfect", seg)
    for name, pr in preds.items():
        m = rollout_mse(ds.stats, pr, seg.x, seg.z)
        family, _, size = name.partition("-")
        rows.append(["caseI-modeling", seed, "caseI-test", family, size or "", m["x"], m["z"]])
    files = {f"rollout_caseI_seed{seed}.csv": rollout_csv(seg, preds)} if mc.export_rollouts else {}
    return rows, files


def caseI_modeling(cfg: RunConfig, store: Store, workers: int = 1) -> StudyResult:
    """Hybrid versus imperfect first-principles rollouts on the held-out block of the Case I data."""
    out = _pool_map(_caseI_seed, [(cfg, store.root, s) for s in cfg.seeds], workers)
    rows = [r for rs, _ in out for r in rs]
    files = {k: v for _, fs in out for k, v in fs.items()}
    return StudyResult(MSE_HEADER, rows, files, _mse_summary(rows))


def _efficiency_seed(args):
    cfg, root, seed = args
    pipe = Pipeline(cfg, Store(root))
    mc, n = cfg.data_efficiency, cfg.data.n_samples
    ds = pipe.dataset("caseI", n, seed)
    seg = Segment.from_dataset(ds, ds.part("test").start, cfg.data.rollout_steps)
    rows = []
    for size in mc.hybrid_sizes:
        m = rollout_mse(ds.stats, predict_segment(pipe, pipe.hybrid("caseI", size, seed), seg), seg.x, seg.z)
        rows.append(["data-efficiency", seed, "caseI-test", "hybrid", size, m["x"], m["z"]])
    for size in mc.blackbox_sizes:
        net = pipe.blackbox("caseI", size, seed, mc.blackbox_variant)
        m = rollout_mse(ds.stats, predict_segment(pipe, net, seg), seg.x, seg.z)
        rows.append(["data-efficiency", seed, "caseI-test", mc.blackbox_variant, size, m["x"], m["z"]])
    return rows


def data_efficiency(cfg: RunConfig, store: Store, workers: int = 1) -> StudyResult:
    """Rollout MSE against training-set size for the hybrid and a black-box net."""
    out = _pool_map(_efficiency_seed, [(cfg, store.root, s) for s in cfg.seeds], workers)
    rows = [r for rs in out for r in rs]
    return StudyResult(MSE_HEADER, rows, {}, _mse_summary(rows))


def _generalization_seed(args):
    cfg, root, seed = args
    pipe = Pipeline(cfg, Store(root))
    gc, n = cfg.generalization, cfg.data.n_samples
    train_ds = pipe.dataset("caseII", n, seed)
    hyb = pipe.hybrid("caseII", gc.hybrid_size, seed)
    bb = pipe.blackbox("caseII", gc.blackbox_size, seed, gc.blackbox_variant)
    rows = []
    for cond in gc.conditions:
        if cond == "condition1":
            ds, start = train_ds, train_ds.part("test").start
        else:
            ds, start = pipe.dataset(cond, cfg.data.test_samples, seed + cfg.data.test_seed_offset), 0
        seg = Segment.from_dataset(ds, start, cfg.data.rollout_steps)
        for name, model, size in (("hybrid", hyb, gc.hybrid_size), (gc.blackbox_variant, bb, gc.blackbox_size),
                                  ("imperfect", "imperfect", "")):
            # errors are normalised with the Condition 1 training statistics
            m = rollout_mse(train_ds.stats, predict_segment(pipe, model, seg), seg.x, seg.z)
            rows.append(["caseII-modeling", seed, cond, name, size, m["x"], m["z"]])
    return rows


def caseII_modeling(cfg: RunConfig, store: Store, workers: int = 1) -> StudyResult:
    """Models trained on Condition 1 only, tested on every condition."""
    out = _pool_map(_generalization_seed, [(cfg, store.root, s) for s in cfg.seeds], workers)
    rows = [r for rs in out for r in rs]
    return StudyResult(MSE_HEADER, rows, {}, _mse_summary(rows))


def _mse_summary(rows) -> dict:
    groups: dict[str, list] = {}
    for r in rows:
        groups.setdefault(f"{r[2]}/{r[3]}{'-' + str(r[4]) if r[4] != '' else ''}", []).append((r[5], r[6]))
    return {k: {"mse_x": float(np.mean([a for a, _ in v])), "mse_z": float(np.mean([b for _, b in v])),
                "seeds": len(v)} for k, v in sorted(groups.items())}


CONTROL_HEADER = ("controller", "model", "samples", "avg_cost_rate", "avg_capture_rate", "truth_violation_fraction",
                  "predicted_feasible_fraction", "inputs_in_box", "failure")


def _control_run(args):
    cfg, root, model_name, kind = args
    cc = cfg.control
    pipe = Pipeline(cfg, Store(root))
    x0, z0 = nominal_steady_state(pipe.truth)
    if model_name == "hybrid":
        predictor = HybridPredictor(pipe.hybrid("caseI", cfg.data.n_samples, cc.model_seed))
    elif model_name in ("imperfect", "truth"):
        predictor = FirstPrinciplesPredictor(pipe.imperfect if model_name == "imperfect" else pipe.truth)
    else:
        raise ValueError(f"unknown controller model {model_name!r}")
    setpoint = None
    if kind == "EMPC":
        ctl = economic_controller(predictor, cc.ce, cc.economic)
    elif kind == "MPC":
        sc = cc.setpoint
        try:
            setpoint = compute_setpoint(predictor, x0, cc.p_nominal, cc.economic, cc.ce.output_box, sc.grid,
                                        sc.rounds, sc.settle_steps, sc.tol, z0=z0,
                                        lower=cc.ce.u_lower, upper=cc.ce.u_upper)
        except Exception as exc:
            raise StageError(f"setpoint-{model_name}", cc.profile_seed, exc) from exc
        ctl = tracking_controller(predictor, setpoint.tracking(), cc.ce)
    else:
        raise ValueError(f"unknown controller kind {kind!r}")
    p = load_profile(cc.steps * cc.hold, cc.profile_seed, cc.profile_hold, *cc.load_range)
    t0 = time.perf_counter()
    trace = closed_loop_run(pipe.truth, ctl, p, x0, z0, cc.hold, cc.economic)
    wall = time.perf_counter() - t0
    return model_name, kind, trace, setpoint, wall


def control_comparison(cfg: RunConfig, store: Store, workers: int = 1) -> StudyResult:
    """Closed-loop runs of every (controller, model) pair on one shared load profile."""
    cc = cfg.control
    jobs = [(cfg, store.root, m, k) for m in cc.models for k in cc.controllers]
    # train the shared model once before fanning out
    if "hybrid" in cc.models:
        Pipeline(cfg, store).hybrid("caseI", cfg.data.n_samples, cc.model_seed)
    out = _pool_map(_control_run, jobs, workers)
    rows, files, summary, timing = [], {}, {}, {}
    sp_rows = []
    for model_name, kind, trace, sp, wall in out:
        s = trace.summary()
        rows.append([kind, model_name, s["samples"], s["avg_cost_rate"], s["avg_capture_rate"],
                     s["truth_violation_fraction"], s["predicted_feasible_fraction"], s["inputs_in_box"],
                     "" if s["failure"] is None else json.dumps(s["failure"], sort_keys=True)])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("k", "t", "p", "F_L", "F_fuel", "F_sw", "F_CO2", "T_reb", "cost_rate", "capture_rate",
                    "pred_feasible"))
        for r in trace.rows():
            w.writerow([r[0], f"{r[1]:.1f}"] + [_fmt(float(v)) for v in r[2:-1]] + [r[-1]])
        files[f"trace_{kind}_{model_name}.csv"] = buf.getvalue()
        summary[f"{kind}-{model_name}"] = {k: v for k, v in s.items() if k not in ("mean_solve_time", "max_solve_time")}
        timing[f"{kind}-{model_name}"] = {"wall_s": wall, "mean_solve_s": s["mean_solve_time"],
                                          "max_solve_s": s["max_solve_time"]}
        if sp is not None:
            sp_rows.append([model_name, *sp.y_s, *sp.u_s, sp.cost])
    if sp_rows:
        files["setpoints.csv"] = rows_to_csv(("model", "F_CO2_s", "T_reb_s", "F_L_s", "F_fuel_s", "F_sw_s", "cost"),
                                             sp_rows)
    return StudyResult(CONTROL_HEADER, rows, files, summary, timing)


RUNNERS = {
    "caseI-modeling": caseI_modeling,
    "caseII-modeling": caseII_modeling,
    "data-efficiency": data_efficiency,
    "control-comparison": control_comparison,
}


# ---------------------------------------------------------------- run directories

def write_run(out_dir: str | Path, name: str, cfg: RunConfig, result: StudyResult, extra: dict | None = None) -> Path:
    """Write a study into ``out_dir/<name>-<config hash>``.

    If the directory already holds a report for the same hash, every CSV
    must match byte for byte; a difference raises :class:`RunConflictError`
    instead of overwriting.
    """
    h = cfg.digest()
    run = Path(out_dir) / f"{name}-{h}"
    files = {"report.csv": result.report_csv(), **result.files}
    if (run / "report.csv").is_file():
        for fname, text in files.items():
            f = run / fname
            if f.is_file() and f.read_text() != text:
                raise RunConflictError(f"{f} differs from the new result for config hash {h}")
    run.mkdir(parents=True, exist_ok=True)
    for fname, text in files.items():
        (run / fname).write_text(text)
    manifest = {"study": name, "config_hash": h, "seeds": list(cfg.seeds), **(extra or {})}
    (run / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    (run / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    (run / "summary.json").write_text(json.dumps(_plain(result.summary), indent=1, sort_keys=True) + "\n")
    (run / "timing.json").write_text(json.dumps(_plain(result.timing), indent=1, sort_keys=True) + "\n")
    return run


def run_study(name: str, cfg: RunConfig, out_dir: str | Path, workers: int = 1, store_root: str | Path | None = None):
    """Run one named study and write its run directory; returns ``(run_dir, result)``."""
    if name not in RUNNERS:
        raise ValueError(f"unknown study {name!r}; choose from {', '.join(STUDIES)}")
    store = Store(store_root if store_root is not None else Path(out_dir) / "cache")
    t0 = time.perf_counter()
    result = RUNNERS[name](cfg, store, workers)
    result.timing["total_s"] = time.perf_counter() - t0
    return write_run(out_dir, name, cfg, result), result
