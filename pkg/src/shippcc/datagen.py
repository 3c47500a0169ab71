"""Excitation signals, operating scenarios and datasets with mismatch labels.

A dataset is one open-loop trajectory of the truth plant under piecewise
constant random inputs and engine loads. Every record also carries the
one-step prediction of the imperfect model from the same ``(x, z, u, p)`` and
the mismatch label ``x_e = x_next - x_fp``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import plant
from .integrator import IntegratorConfig, StepFailure, nominal_steady_state, one_step, simulate_open_loop
from .params import PlantParams

log = logging.getLogger(__name__)

# engine-load ranges of the ship operating conditions
CONDITIONS = {
    "condition1": (0.40, 0.70),  # slow steaming
    "condition2": (0.80, 1.00),  # maneuvering
    "condition3": (0.10, 0.30),  # low engine load
}

# independent random streams derived from one seed
_STREAM_LOAD, _STREAM_INPUT, _STREAM_ORDER = 1, 2, 3

SPLIT_FRACTIONS = (0.7, 0.1, 0.2)
STD_FLOOR = 1e-8


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


@dataclass(frozen=True)
class Scenario:
    """Operating-condition mix and hold lengths of the excitation signals."""

    name: str = "caseI"
    mix: tuple[tuple[str, float], ...] = (("condition1", 0.60), ("condition2", 0.15), ("condition3", 0.25))
    load_hold: int = 1000
    input_hold: int = 200
    load_mean: float = 0.55
    load_std: float = 0.065
    seed: int = 0

    def __post_init__(self):
        total = sum(f for _, f in self.mix)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"condition mix fractions must sum to 1, got {total}")
        for c, f in self.mix:
            if c not in CONDITIONS:
                raise ValueError(f"unknown condition {c!r}")
            if f < 0:
                raise ValueError("condition fractions must be non-negative")
        if self.load_hold < 1 or self.input_hold < 1:
            raise ValueError("hold lengths must be >= 1")
        if not self.load_std >= 0:
            raise ValueError("load_std must be non-negative")

    @classmethod
    def case_i(cls, seed: int = 0) -> "Scenario":
        return cls(name="caseI", seed=seed)

    @classmethod
    def case_ii(cls, seed: int = 0) -> "Scenario":
        return cls(name="caseII", mix=(("condition1", 1.0),), seed=seed)

    @classmethod
    def single(cls, condition: str, seed: int = 0) -> "Scenario":
        return cls(name=condition, mix=((condition, 1.0),), seed=seed)

    @classmethod
    def from_name(cls, name: str, seed: int = 0) -> "Scenario":
        key = name.replace("-", "").replace("_", "").lower()
        if key in ("casei", "case1"):
            return cls.case_i(seed)
        if key in ("caseii", "case2"):
            return cls.case_ii(seed)
        if key in CONDITIONS:
            return cls.single(key, seed)
        raise ValueError(f"unknown scenario {name!r}")


def draw_loads(rng: np.random.Generator, n: int, mean: float = 0.55, std: float = 0.065) -> np.ndarray:
    """Unclipped engine-load draws."""
    return rng.normal(mean, std, n)


def _hold_conditions(scenario: Scenario, n_holds: int, rng: np.random.Generator) -> list[str]:
    """Condition of every load hold; counts follow the mix by largest remainder, order is shuffled."""
    names = [c for c, _ in scenario.mix]
    exact = np.array([f for _, f in scenario.mix]) * n_holds
    counts = np.floor(exact).astype(int)
    rest = n_holds - counts.sum()
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:rest]] += 1
    labels = np.repeat(np.arange(len(names)), counts)
    rng.shuffle(labels)
    return [names[i] for i in labels]


def make_disturbance_profile(scenario: Scenario, length: int, seed: int | None = None,
                             return_conditions: bool = False):
    """Piecewise-constant engine load, one draw per hold of ``load_hold`` samples.

    A draw ``v`` is shifted by the distance between the condition's range centre
    and ``load_mean`` and then clipped to the range, so slow-steaming loads keep
    the nominal distribution and the other conditions spread alike.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    seed = scenario.seed if seed is None else seed
    n_holds = -(-length // scenario.load_hold)
    conds = _hold_conditions(scenario, n_holds, _rng(seed, _STREAM_ORDER))
    v = draw_loads(_rng(seed, _STREAM_LOAD), n_holds, scenario.load_mean, scenario.load_std)
    vals = np.empty(n_holds)
    for i, c in enumerate(conds):
        lo, hi = CONDITIONS[c]
        vals[i] = np.clip(0.5 * (lo + hi) + v[i] - scenario.load_mean, lo, hi)
    p = np.repeat(vals, scenario.load_hold)[:length]
    if return_conditions:
        return p, np.repeat(np.array(conds), scenario.load_hold)[:length]
    return p


def make_excitation(length: int, seed: int, lower=plant.U_LOWER, upper=plant.U_UPPER, hold: int = 200) -> np.ndarray:
    """Piecewise-constant inputs, each uniform in its interval, held ``hold`` samples."""
    if length <= 0:
        raise ValueError("length must be positive")
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    n_holds = -(-length // hold)
    vals = _rng(seed, _STREAM_INPUT).uniform(lower, upper, (n_holds, len(lower)))
    return np.repeat(vals, hold, axis=0)[:length]


# ---------------------------------------------------------------- datasets

@dataclass
class NormStats:
    """Per-dimension mean and std of every record field, from the training split."""

    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]

    def normalize(self, key: str, a):
        return (np.asarray(a, float) - self.mean[key]) / self.std[key]

    def denormalize(self, key: str, a):
        return np.asarray(a, float) * self.std[key] + self.mean[key]

    def active(self, key: str) -> np.ndarray:
        """Dimensions that varied in the training split; the rest were constant."""
        return self.std[key] > STD_FLOOR

    def denormalize_active(self, key: str, a):
        """Denormalise, pinning constant dimensions to their training value."""
        return np.where(self.active(key), self.denormalize(key, a), self.mean[key])

    def to_dict(self) -> dict:
        return {k: {"mean": self.mean[k].tolist(), "std": self.std[k].tolist()} for k in self.mean}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls({k: np.asarray(v["mean"]) for k, v in d.items()}, {k: np.asarray(v["std"]) for k, v in d.items()})


FIELDS = ("x", "z", "u", "p", "x_next", "z_next", "x_fp", "x_e")


@dataclass
class Dataset:
    """Records ``(x_k, z_k, u_k, p_k, x_{k+1})`` of one contiguous trajectory.

    ``z`` is consistent with ``(x, u, p)``; ``x_fp`` is the imperfect model's
    one-step prediction and ``x_e = x_next - x_fp``. ``bounds`` gives the
    train/val/test block edges once split.
    """

    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    p: np.ndarray
    x_next: np.ndarray
    z_next: np.ndarray
    x_fp: np.ndarray
    x_e: np.ndarray
    manifest: dict = field(default_factory=dict)
    bounds: tuple[int, int, int, int] | None = None
    stats: NormStats | None = None

    def __len__(self) -> int:
        return len(self.x)

    def part(self, name: str) -> slice:
        if self.bounds is None:
            raise ValueError("dataset has not been split")
        i = ("train", "val", "test").index(name)
        return slice(self.bounds[i], self.bounds[i + 1])

    def subset(self, sl: slice) -> "Dataset":
        """Records in ``sl`` as an unsplit dataset sharing the manifest."""
        return Dataset(*(getattr(self, f)[sl] for f in FIELDS), manifest=dict(self.manifest))

    def head(self, n: int) -> "Dataset":
        return self.subset(slice(0, n))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {f: getattr(self, f) for f in FIELDS}
        if self.bounds is not None:
            arrays["bounds"] = np.asarray(self.bounds)
        np.savez(path.with_suffix(".npz"), **arrays)
        man = dict(self.manifest)
        if self.stats is not None:
            man["normalization"] = self.stats.to_dict()
        path.with_suffix(".json").write_text(json.dumps(man, indent=1, sort_keys=True))
        return path.with_suffix(".npz")

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        path = Path(path)
        if not path.with_suffix(".npz").is_file():
            raise FileNotFoundError(f"dataset file not found: {path.with_suffix('.npz')}")
        with np.load(path.with_suffix(".npz")) as d:
            arrays = {f: d[f] for f in FIELDS}
            bounds = tuple(int(b) for b in d["bounds"]) if "bounds" in d else None
        man = {}
        if path.with_suffix(".json").is_file():
            man = json.loads(path.with_suffix(".json").read_text())
        stats = NormStats.from_dict(man.pop("normalization")) if "normalization" in man else None
        return cls(**arrays, manifest=man, bounds=bounds, stats=stats)


def mismatch_labels(params_imperfect: PlantParams, x, z, u, p, x_next, cfg: IntegratorConfig = IntegratorConfig()):
    """Imperfect one-step predictions and the labels ``x_next - x_fp``."""
    x_fp, _, ok = one_step(params_imperfect, x, z, u, p, cfg)
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise StepFailure("imperfect-model one-step prediction failed", index=bad)
    return x_fp, np.asarray(x_next) - x_fp


def build_dataset(scenario: Scenario, n_samples: int, params_truth: PlantParams, params_imperfect: PlantParams,
                  cfg: IntegratorConfig = IntegratorConfig(), x0=None, z0=None,
                  progress: Callable[[int], None] | None = None) -> Dataset:
    """Simulate ``n_samples`` truth steps from the nominal steady state and label them.

    Each truth step starts from a fresh Jacobian so that, with identical
    parameter sets, the imperfect prediction reproduces it bit for bit.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    p_seq, conds = make_disturbance_profile(scenario, n_samples, return_conditions=True)
    u_seq = make_excitation(n_samples, scenario.seed, hold=scenario.input_hold)
    if x0 is None:
        x0, z0 = nominal_steady_state(params_truth, cfg)
    traj = simulate_open_loop(params_truth, x0, u_seq, p_seq, cfg, z0=z0, progress=progress, reuse_jacobian=False)
    x, z, x_next = traj.x[:-1], traj.z_start, traj.x[1:]
    x_fp, x_e = mismatch_labels(params_imperfect, x, z, u_seq, p_seq, x_next, cfg)
    manifest = {
        "scenario": {k: (list(map(list, v)) if k == "mix" else v) for k, v in asdict(scenario).items()},
        "seed": scenario.seed,
        "n_samples": n_samples,
        "sample_period": cfg.sample_period,
        "condition_counts": {c: int(np.sum(conds == c)) for c in CONDITIONS},
    }
    return Dataset(x, z, u_seq.copy(), p_seq.copy(), x_next, traj.z[1:], x_fp, x_e, manifest)


def split_bounds(n: int, fractions=SPLIT_FRACTIONS) -> tuple[int, int, int, int]:
    a = int(round(fractions[0] * n))
    b = int(round((fractions[0] + fractions[1]) * n))
    return 0, a, b, n


def compute_stats(ds: Dataset, sl: slice) -> NormStats:
    mean, std = {}, {}
    for f in FIELDS:
        a = getattr(ds, f)[sl]
        a = a.reshape(len(a), -1)
        mean[f] = a.mean(axis=0)
        std[f] = np.maximum(a.std(axis=0), STD_FLOOR)
    # the successor state shares the state's scale
    mean["x_next"], std["x_next"] = mean["x"], std["x"]
    mean["x_fp"], std["x_fp"] = mean["x"], std["x"]
    return NormStats(mean, std)


def split_and_normalize(ds: Dataset, fractions=SPLIT_FRACTIONS) -> Dataset:
    """Contiguous train/val/test blocks; statistics from the training block only."""
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    bounds = split_bounds(len(ds), fractions)
    out = Dataset(*(getattr(ds, f) for f in FIELDS), manifest=dict(ds.manifest), bounds=bounds)
    out.stats = compute_stats(out, out.part("train"))
    out.manifest["split"] = {"train": bounds[1] - bounds[0], "val": bounds[2] - bounds[1], "test": bounds[3] - bounds[2]}
    return out
