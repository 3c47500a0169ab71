"""Acceptance criteria 1-10, one test each; a pass/fail line per criterion is printed at the end of the session.

Criteria 4, 5, 6, 8 and 9 read the full-scale study directories written by
``shippcc experiment <study>`` with the default configuration. They are
looked up under ``$SHIPPCC_RESULTS`` (default: ``results/`` next to this
directory) by config hash. If a directory is missing, the study is run
when ``SHIPPCC_ACCEPTANCE_FULL=1``; otherwise the criterion is skipped.
"""
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE
from shippcc import plant
from shippcc.cli import main
from shippcc.control import (
    CeConfig, HorizonEval, TrackingConfig, blend, ce_solve, constraint_distance, economic_cost, tracking_cost,
)
from shippcc.experiments import RunConfig, run_study
from shippcc.integrator import IntegratorConfig, dae_step, step_batch
from shippcc.neural import AdamState, TrainConfig, adam_update
from shippcc.params import EngineParams, HxParams, load_params
from test_integrator import _linear_dae, random_states
from test_neural import fd_check

RESULTS = Path(os.environ.get("SHIPPCC_RESULTS", Path(__file__).resolve().parent.parent / "results"))
TRUTH = load_params()


def criterion(n):
    def mark(fn):
        fn.criterion = n
        return fn
    return mark


def report(n, ok: bool, detail: str):
    ACCEPTANCE[n] = ("", detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def study(name: str) -> Path:
    cfg = RunConfig()
    run = RESULTS / f"{name}-{cfg.digest()}"
    if not (run / "summary.json").is_file():
        if os.environ.get("SHIPPCC_ACCEPTANCE_FULL") != "1":
            pytest.skip(f"no full-scale {name} results under {RESULTS}; set SHIPPCC_ACCEPTANCE_FULL=1 to run it")
        run, _ = run_study(name, cfg, RESULTS)
    return run


def load_json(run: Path, name: str) -> dict:
    return json.loads((run / name).read_text())


# ---------------------------------------------------------------- 1-3, 7: unit suites

@criterion(1)
def test_criterion_1_closed_form_oracles():
    t0 = time.perf_counter()
    ep, hx = EngineParams(), HxParams()
    tc = TrackingConfig((0.4, 390.0), (0.03, 0.26, 0.03))
    checks = [
        ("CO2 inflow at full load", plant.flue_gas_rates(1.0, ep)["co2_rate"],
         2 * 10800 * 0.1775 * 0.8486 * (44.01 / 12.01) / 3600),
        ("heat recovery", plant.heat_supply(10.0, 0.0, ep)["Q_rec"], 2310.0),
        ("turbine heat", plant.heat_supply(0.0, 0.25, ep)["Q_turbine"], 42700 * 0.25 * (2763 - 697) / 2763),
        ("seawater cooler", plant.seawater_hx_outlet(350.0, 0.03, 0.03, hx) - 350.0, (4.18 / 3.9) * (308 - 323)),
        ("economic cost below limit", float(economic_cost([0.3, 390.0], [0.03, 0.25, 0.03])), 0.32130),
        ("economic cost above limit", float(economic_cost([0.6, 390.0], [0.03, 0.25, 0.03])), 0.32630),
        ("tracking cost output", float(tracking_cost([0.4, 391.0], [0.03, 0.26, 0.03], tc)), 10.0),
        ("tracking cost inputs", float(tracking_cost([0.4, 390.0], [1.03, 1.26, 1.03], tc)), 0.24),
        ("constraint distance", float(constraint_distance([0.4, 395.15])), 2.0),
    ]
    worst = max(abs(got - exp) / abs(exp) for _, got, exp in checks)
    bad = [name for name, got, exp in checks if abs(got - exp) > 1e-10 * abs(exp)]
    dt = time.perf_counter() - t0
    report(1, not bad and dt < 1.0,
           f"{len(checks)} oracles, worst rel err {worst:.1e}, {dt:.2f} s" + (f", failing: {bad}" if bad else ""))


@criterion(2)
def test_criterion_2_gradients_and_adam():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for seed in range(20):
        sizes = tuple(int(v) for v in rng.integers(1, 7, 3))
        worst = max(worst, fd_check(sizes, seed))
    cfg = TrainConfig(lr=0.01)
    g = np.array([0.3, -2.0, 1e-3])
    p = [np.zeros(3)]
    adam_update(p, [g], AdamState.for_params(p), cfg)
    adam_ok = np.allclose(p[0], -cfg.lr * g / (np.abs(g) + cfg.eps), rtol=1e-12, atol=0)
    dt = time.perf_counter() - t0
    report(2, worst < 1e-5 and adam_ok and dt < 30,
           f"20 nets, worst FD rel err {worst:.1e}, Adam hand check {'ok' if adam_ok else 'wrong'}, {dt:.1f} s")


@criterion(3)
def test_criterion_3_integrator():
    t0 = time.perf_counter()
    x, z, u, p = random_states(100, seed=11)
    res = []
    for _ in range(2):
        x, z, ok = step_batch(TRUTH, x, z, u, p)
        res.append(np.max(np.abs(plant.plant_dae(x, z, u, p, TRUTH)[1])) if np.all(ok) else np.inf)
    resid = max(res)
    lin_ok = True
    for n in (1, 10, 50):
        cfg = IntegratorConfig(sample_period=1.0, substeps=n, newton_tol=1e-13, step_tol=1e-14)
        xn, _ = dae_step(_linear_dae(), np.array([1.0]), np.array([1.0]), np.zeros(1), 0.0, cfg)
        lin_ok &= abs(xn[0] - (1 + 1 / n) ** -n) <= 1e-9 * xn[0] and abs(xn[0] - np.exp(-1)) <= 0.5 / n
    x1, z1, u1, p1 = random_states(1, seed=4, spread=0.05)
    sols = {n: dae_step(TRUTH, x1[0], z1[0], u1[0], p1[0], IntegratorConfig(substeps=n))[0] for n in (5, 10, 20)}
    ratio = np.linalg.norm(sols[10] - sols[5]) / np.linalg.norm(sols[20] - sols[10])
    dt = time.perf_counter() - t0
    report(3, resid <= 1e-8 and lin_ok and 1.5 < ratio < 2.6 and dt < 120,
           f"max residual {resid:.1e}, linear oracle {'ok' if lin_ok else 'wrong'}, "
           f"halving ratio {ratio:.2f}, {dt:.1f} s")


@criterion(7)
def test_criterion_7_cross_entropy():
    t0 = time.perf_counter()
    cfg = CeConfig(horizon=3, seed=1)
    lo, hi = np.asarray(cfg.u_lower), np.asarray(cfg.u_upper)
    target = np.tile(lo + 0.3 * (hi - lo), (3, 1))

    def quad(U):
        J = np.sum(((U - target) / (hi - lo)) ** 2, axis=(1, 2))
        return HorizonEval(J, np.ones(len(U), bool), np.zeros(len(U)))

    res = ce_solve(quad, cfg)
    err = float(np.max(np.abs(res.u - target[0])))

    last = {}

    def infeasible(U):
        d = np.abs(U[:, :, 1] - 0.19).max(axis=1) + 1.0
        last["U"], last["d"] = U.copy(), d
        return HorizonEval(-d, np.zeros(len(U), bool), d)

    small = CeConfig(n_iter=3, n_sample=50, n_elite=5, horizon=2)
    r2 = ce_solve(infeasible, small)
    head_ok = np.array_equal(r2.u, last["U"][int(np.argmin(last["d"])), 0]) and not r2.feasible

    a = np.random.default_rng(0).uniform(size=(4, 3, 2))
    m1, v1 = blend(a[0], a[1], a[2], a[3], 1.0)
    m0, v0 = blend(a[0], a[1], a[2], a[3], 0.0)
    blend_ok = (np.array_equal(m1, a[2]) and np.array_equal(v1, a[3])
                and np.array_equal(m0, a[0]) and np.array_equal(v0, a[1]))
    dt = time.perf_counter() - t0
    report(7, err <= 1e-3 and res.iterations <= 20 and head_ok and blend_ok and dt < 60,
           f"quadratic error {err:.1e} after {res.iterations} iterations, empty-set head "
           f"{'ok' if head_ok else 'wrong'}, blend {'exact' if blend_ok else 'wrong'}, {dt:.1f} s")


# ---------------------------------------------------------------- 4-6: modeling studies

def _pair(summary, a, b):
    return summary[a]["mse_x"], summary[b]["mse_x"], summary[a]["mse_z"], summary[b]["mse_z"]


@criterion(4)
def test_criterion_4_hybrid_beats_imperfect():
    run = study("caseI-modeling")
    s, t = load_json(run, "summary.json"), load_json(run, "timing.json")["total_s"]
    hx, ix, hz, iz = _pair(s, "caseI-test/hybrid-20000", "caseI-test/imperfect")
    report(4, hx <= 0.5 * ix and hz < iz and t < 1200,
           f"x-MSE hybrid {hx:.4g} vs imperfect {ix:.4g} ({1 - hx / ix:.1%} lower), "
           f"z-MSE {hz:.4g} vs {iz:.4g}, {t / 60:.1f} min")


@criterion(5)
def test_criterion_5_data_efficiency():
    run = study("data-efficiency")
    s, t = load_json(run, "summary.json"), load_json(run, "timing.json")["total_s"]
    hx, bx, hz, bz = _pair(s, "caseI-test/hybrid-5000", "caseI-test/NN2-20000")
    report(5, hx <= bx and hz <= bz and t < 2400,
           f"3-seed mean x-MSE hybrid(5k) {hx:.4g} vs NN2(20k) {bx:.4g}, z-MSE {hz:.4g} vs {bz:.4g}, {t / 60:.1f} min")


@criterion(6)
def test_criterion_6_generalization():
    run = study("caseII-modeling")
    s, t = load_json(run, "summary.json"), load_json(run, "timing.json")["total_s"]
    ok, parts = t < 1800, []
    for cond in ("condition2", "condition3"):
        hx, bx, hz, bz = _pair(s, f"{cond}/hybrid-5000", f"{cond}/NN1-20000")
        ok &= hx < bx and hz < bz
        parts.append(f"{cond} x {hx:.3g}<{bx:.3g} z {hz:.3g}<{bz:.3g}")
    report(6, ok, "3-seed mean, hybrid vs NN1: " + "; ".join(parts) + f", {t / 60:.1f} min")


# ---------------------------------------------------------------- 8-9: closed loop

@criterion(8)
def test_criterion_8_economic_vs_tracking():
    run = study("control-comparison")
    s, t = load_json(run, "summary.json"), load_json(run, "timing.json")["total_s"]
    cc = RunConfig().control
    e, m = s["EMPC-hybrid"], s["MPC-hybrid"]
    gain = 1 - e["avg_cost_rate"] / m["avg_cost_rate"]
    full = all(r["samples"] == cc.steps * cc.hold and r["failure"] is None for r in (e, m))
    in_box = e["inputs_in_box"] and m["inputs_in_box"]
    feas = e["predicted_feasible_fraction"]
    report(8, gain >= 0.02 and full and in_box and feas >= 0.95 and t < 3600,
           f"EMPC {e['avg_cost_rate']:.5f} vs MPC {m['avg_cost_rate']:.5f} $/s ({gain:.1%} lower), "
           f"inputs in box {in_box}, predicted feasible {feas:.1%}, complete runs {full}, {t / 60:.1f} min")


@criterion(9)
def test_criterion_9_model_quality_in_loop():
    run = study("control-comparison")
    s = load_json(run, "summary.json")
    h, i = s["EMPC-hybrid"], s["EMPC-imperfect"]
    report(9, h["avg_cost_rate"] < i["avg_cost_rate"] and h["avg_capture_rate"] > i["avg_capture_rate"],
           f"EMPC cost hybrid {h['avg_cost_rate']:.5f} vs imperfect {i['avg_cost_rate']:.5f} $/s, "
           f"capture {h['avg_capture_rate']:.2%} vs {i['avg_capture_rate']:.2%}")


# ---------------------------------------------------------------- 10: determinism

TINY = {
    "seeds": [0],
    "data": {"n_samples": 200, "test_samples": 60, "rollout_steps": 20},
    "train": {"epochs": 2, "batch_size": 50},
    "modeling": {"hybrid_sizes": [200], "blackbox_sizes": [200]},
    "data_efficiency": {"hybrid_sizes": [100], "blackbox_sizes": [200]},
    "generalization": {"hybrid_size": 100, "blackbox_size": 200},
    "control": {"steps": 2, "hold": 2, "models": ["truth", "imperfect"],
                "ce": {"n_iter": 2, "n_sample": 8, "n_elite": 2, "horizon": 2},
                "setpoint": {"grid": 3, "rounds": 0, "settle_steps": 5, "tol": 1.0}},
    "simulate": {"steps": 5, "load_profile": True, "profile_hold": 2},
}


@criterion(10)
def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(TINY))
    commands = [["simulate"]] + [["experiment", s] for s in
                                 ("caseI-modeling", "data-efficiency", "caseII-modeling", "control-comparison")]
    for out in ("a", "b"):
        for cmd in commands:
            assert main(cmd + ["--config", str(cfg), "--out", str(tmp_path / out)]) == 0, cmd
    a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").glob("*-*/*.csv"))
    b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").glob("*-*/*.csv"))
    differ = [str(f) for f in a if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    report(10, a == b and len(a) >= 10 and not differ,
           f"{len(a)} CSV files from {len(commands)} commands, reruns byte-identical: {not differ}"
           + (f", differing: {differ}" if differ else ""))
