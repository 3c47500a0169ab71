"""Economic and tracking predictive control solved by the constrained cross-entropy method.

The controller rolls a process model ``N_c`` sample periods ahead for every
candidate input sequence, ranks candidates by accumulated stage cost among
those whose predicted reboiler temperature stays inside its band (or by
constraint distance when none does) and refits a diagonal Gaussian to the
elite set. The first input of the best candidate is held on the plant for
``hold`` samples.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import plant
from .hybrid import HybridModel, clip_state, compensation, infer_algebraic
from .integrator import (
    IntegratorConfig, StepFailure, _JacobianCache, consistent_initialize, simulate_open_loop, step_batch,
)
from .params import PlantParams

log = logging.getLogger(__name__)

# looser Newton tolerances for the many candidate rollouts; the effect on
# predicted outputs is far below the controller's resolution
CONTROL_INTEGRATOR = IntegratorConfig(newton_tol=1e-5, step_tol=1e-7)

T_REB_LOWER = 385.15
T_REB_UPPER = 393.15


class SetpointError(RuntimeError):
    """No steady state of the model satisfies the output constraint."""


# ---------------------------------------------------------------- stage costs

@dataclass(frozen=True)
class EconomicConfig:
    alpha: float = 0.05  # carbon tax, $/kg
    beta: float = 1.2852  # fuel price, $/kg
    y_limit: float = 0.5  # CO2 release threshold, kg/s

    def __post_init__(self):
        if min(self.alpha, self.beta, self.y_limit) < 0:
            raise ValueError("economic weights must be non-negative")


def economic_cost(y, u, ec: EconomicConfig = EconomicConfig()) -> np.ndarray:
    """Operating cost rate in $/s: tax on CO2 released above the limit plus fuel."""
    y = np.asarray(y, float)
    u = np.asarray(u, float)
    return ec.alpha * np.maximum(y[..., 0] - ec.y_limit, 0.0) + ec.beta * u[..., 1]


@dataclass(frozen=True)
class TrackingConfig:
    y_s: tuple
    u_s: tuple
    Q: tuple = (3.0, 10.0)
    R: tuple = (0.08, 0.08, 0.08)

    def __post_init__(self):
        if min(self.Q) < 0 or min(self.R) < 0:
            raise ValueError("tracking weights must be non-negative")
        if len(self.y_s) != len(self.Q) or len(self.u_s) != len(self.R):
            raise ValueError("set-point and weight dimensions differ")


def tracking_cost(y, u, tc: TrackingConfig) -> np.ndarray:
    """Weighted squared deviation from the set-point pair ``(y_s, u_s)``."""
    dy = np.asarray(tc.y_s) - np.asarray(y, float)
    du = np.asarray(tc.u_s) - np.asarray(u, float)
    return np.sum(np.asarray(tc.Q) * dy**2, axis=-1) + np.sum(np.asarray(tc.R) * du**2, axis=-1)


@dataclass(frozen=True)
class OutputBox:
    lower: tuple = (-np.inf, T_REB_LOWER)
    upper: tuple = (np.inf, T_REB_UPPER)

    def __post_init__(self):
        # bounds may arrive as strings such as "-inf" from a config file
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if np.any(np.asarray(self.lower) > np.asarray(self.upper)):
            raise ValueError("output box lower bound exceeds upper bound")


def constraint_distance(y, box: OutputBox = OutputBox()) -> np.ndarray:
    """Euclidean distance from ``y`` to the output box; zero iff inside."""
    y = np.asarray(y, float)
    return np.linalg.norm(y - np.clip(y, box.lower, box.upper), axis=-1)


# ---------------------------------------------------------------- predictors

class HybridPredictor:
    """Batched rollouts of the hybrid model; the state is ``x`` alone."""

    def __init__(self, model: HybridModel, cfg: IntegratorConfig = CONTROL_INTEGRATOR):
        self.model = model.with_cfg(cfg)
        self.engine = model.params.engine
        self.name = "hybrid"

    def init_state(self, x0, z0, u, p, B: int):
        return np.repeat(np.asarray(x0, float)[None], B, axis=0)

    def advance(self, state, u, p, cache):
        m = self.model
        B = state.shape[0]
        p_b = np.full(B, float(p))
        z_hat = infer_algebraic(m, state, u, p_b)
        x_fp, _, ok = step_batch(m.params, state, z_hat, u, p_b, m.cfg, cache)
        xn = x_fp + compensation(m, state, z_hat, u, p_b)
        ok &= np.all(np.isfinite(xn), axis=1)
        return clip_state(np.where(ok[:, None], xn, state)), ok

    def x_of(self, state):
        return state


class FirstPrinciplesPredictor:
    """Batched rollouts of a first-principles parameter set; the state is ``(x, z)``."""

    def __init__(self, params: PlantParams, cfg: IntegratorConfig = CONTROL_INTEGRATOR):
        self.params = params
        self.cfg = cfg
        self.engine = params.engine
        self.name = params.name

    def init_state(self, x0, z0, u, p, B: int):
        # z only seeds the first Newton solve; the nominal input keeps it
        # independent of the candidate order
        x0 = np.asarray(x0, float)
        z0 = consistent_initialize(self.params, x0, plant.U_NOMINAL, p, self.cfg, z0=z0)
        return np.repeat(x0[None], B, axis=0), np.repeat(np.asarray(z0, float)[None], B, axis=0)

    def advance(self, state, u, p, cache):
        x, z = state
        xn, zn, ok = step_batch(self.params, x, z, u, np.full(x.shape[0], float(p)), self.cfg, cache)
        return (np.where(ok[:, None], xn, x), np.where(ok[:, None], zn, z)), ok

    def x_of(self, state):
        return state[0]


def predict_outputs(predictor, x0, U, p_seq, z0=None, caches=None):
    """Outputs after each input of every candidate sequence.

    ``U`` has shape ``(S, N_c, m)``; returns ``(Y, ok)`` with ``Y`` of shape
    ``(S, N_c, 2)``. ``caches`` (one per horizon step) carries Jacobians
    across repeated calls from the same initial state.
    """
    U = np.asarray(U, float)
    S, Nc, _ = U.shape
    p_seq = np.broadcast_to(np.asarray(p_seq, float).reshape(-1), (Nc,))
    state = predictor.init_state(x0, z0, U[0, 0], p_seq[0], S)
    Y = np.empty((S, Nc, plant.NY))
    ok = np.ones(S, bool)
    for j in range(Nc):
        cache = caches[j] if caches is not None else None
        state, okj = predictor.advance(state, U[:, j], p_seq[j], cache)
        ok &= okj
        Y[:, j] = plant.outputs(predictor.x_of(state), p_seq[j], predictor.engine)
    return Y, ok


# ---------------------------------------------------------------- horizon objective

@dataclass
class HorizonEval:
    """Objective of each candidate: accumulated cost, feasibility, worst constraint distance."""

    J: np.ndarray
    feasible: np.ndarray
    d_max: np.ndarray
    Y: np.ndarray | None = None


def evaluate_outputs(Y, U, ok, cost: Callable, box: OutputBox = OutputBox()) -> HorizonEval:
    """Stage costs summed over the horizon; failed rollouts are infeasible with infinite cost."""
    stage = cost(Y, U)
    J = np.sum(stage, axis=-1)
    d = constraint_distance(Y, box)
    d_max = np.max(d, axis=-1)
    feasible = ok & (d_max == 0.0)
    J = np.where(ok, J, np.inf)
    d_max = np.where(ok, d_max, np.inf)
    return HorizonEval(J, feasible, d_max, Y)


def objective_over_horizon(predictor, x_k, u_seq, p_seq, cost: Callable, box: OutputBox = OutputBox(),
                           z_k=None, caches=None) -> HorizonEval:
    """Roll the model over ``u_seq`` (``(N_c, m)`` or a batch ``(S, N_c, m)``) and score it."""
    u_seq = np.asarray(u_seq, float)
    single = u_seq.ndim == 2
    U = u_seq[None] if single else u_seq
    Y, ok = predict_outputs(predictor, x_k, U, p_seq, z_k, caches)
    ev = evaluate_outputs(Y, U, ok, cost, box)
    if single:
        return HorizonEval(ev.J[0], ev.feasible[0], ev.d_max[0], ev.Y[0])
    return ev


# ---------------------------------------------------------------- cross-entropy solver

@dataclass(frozen=True)
class CeConfig:
    n_iter: int = 20
    n_sample: int = 400
    n_elite: int = 20
    lam: float = 0.01  # weight of the previous distribution in the update
    nu_min: float = 1e-8
    horizon: int = 5
    u_lower: tuple = tuple(plant.U_LOWER)
    u_upper: tuple = tuple(plant.U_UPPER)
    nu0: float = 1.0
    output_box: OutputBox = OutputBox()
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_elite <= self.n_sample:
            raise ValueError("need 1 <= n_elite <= n_sample")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.horizon < 1 or self.n_iter < 1:
            raise ValueError("horizon and n_iter must be >= 1")
        if len(self.u_lower) != len(self.u_upper) or np.any(np.asarray(self.u_lower) > np.asarray(self.u_upper)):
            raise ValueError("invalid input box")
        if not self.nu_min > 0 or not self.nu0 > 0:
            raise ValueError("variances must be positive")

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.u_lower) + np.asarray(self.u_upper))


@dataclass
class CeResult:
    u: np.ndarray  # first input of the best sequence
    sequence: np.ndarray
    J: float
    feasible: bool
    d_max: float
    iterations: int
    mu: np.ndarray
    nu: np.ndarray
    Y: np.ndarray | None = None


def blend(elite_mean, elite_var, mu, nu, lam: float):
    """Moving-average update of the sampling distribution."""
    return (1.0 - lam) * elite_mean + lam * mu, (1.0 - lam) * elite_var + lam * nu


def rank_candidates(ev: HorizonEval) -> np.ndarray:
    """Feasible candidates by cost, then the rest by constraint distance; ties by index."""
    idx = np.arange(len(ev.J))
    key = np.where(ev.feasible, ev.J, ev.d_max)
    return np.lexsort((idx, key, ~ev.feasible))


def ce_solve(objective: Callable[[np.ndarray], HorizonEval], cfg: CeConfig = CeConfig(), mu_init=None,
             key: tuple = ()) -> CeResult:
    """Constrained cross-entropy search over input sequences of length ``cfg.horizon``.

    ``objective`` maps candidates ``(S, N_c, m)`` to a :class:`HorizonEval`.
    All random draws come from ``(cfg.seed, *key)`` up front, so the result
    does not depend on how the objective is evaluated.
    """
    lo, hi = np.asarray(cfg.u_lower, float), np.asarray(cfg.u_upper, float)
    m = lo.size
    mu = np.tile(cfg.midpoint, (cfg.horizon, 1)) if mu_init is None else np.array(mu_init, float)
    if mu.shape != (cfg.horizon, m):
        raise ValueError(f"initial mean must have shape {(cfg.horizon, m)}")
    nu = np.full((cfg.horizon, m), cfg.nu0)
    rng = np.random.default_rng([cfg.seed, *map(int, key)])
    eps = rng.standard_normal((cfg.n_iter, cfg.n_sample, cfg.horizon, m))
    best = None
    it = 0
    while it < cfg.n_iter and np.max(nu) > cfg.nu_min:
        U = np.clip(mu + np.sqrt(nu) * eps[it], lo, hi)
        ev = objective(U)
        order = rank_candidates(ev)
        elite = U[order[:cfg.n_elite]]
        mu, nu = blend(elite.mean(axis=0), elite.var(axis=0), mu, nu, cfg.lam)
        nu = np.maximum(nu, cfg.nu_min)
        b = order[0]
        best = (U[b], float(ev.J[b]), bool(ev.feasible[b]), float(ev.d_max[b]),
                None if ev.Y is None else ev.Y[b])
        it += 1
    if best is None:
        # the initial variance is already below the floor: evaluate the mean alone
        U = np.clip(mu, lo, hi)[None]
        ev = objective(U)
        best = (U[0], float(ev.J[0]), bool(ev.feasible[0]), float(ev.d_max[0]), None if ev.Y is None else ev.Y[0])
    seq, J, feas, d, Y = best
    return CeResult(np.clip(seq[0], lo, hi), seq.copy(), J, feas, d, it, mu, nu, Y)


def shift_warm_start(sequence, cfg: CeConfig) -> np.ndarray:
    """Previous solution advanced one step, the new tail at the box midpoint."""
    return np.concatenate([np.asarray(sequence, float)[1:], cfg.midpoint[None]])


# ---------------------------------------------------------------- controllers

@dataclass
class Controller:
    """Receding-horizon controller: a predictor, a stage cost and CE settings."""

    kind: str  # "EMPC" or "MPC"
    predictor: object
    cost: Callable
    ce: CeConfig = CeConfig()
    warm_start: bool = True
    _prev: np.ndarray | None = field(default=None, repr=False)
    _calls: int = field(default=0, repr=False)

    @property
    def name(self) -> str:
        return f"{self.kind}-{self.predictor.name}"

    def reset(self) -> None:
        self._prev = None
        self._calls = 0

    def solve(self, x_k, p_k: float, z_k=None) -> CeResult:
        caches = [_JacobianCache() for _ in range(self.ce.horizon)]
        p_seq = np.full(self.ce.horizon, float(p_k))  # load held at its measured value
        pred, box = self.predictor, self.ce.output_box

        def objective(U):
            Y, ok = predict_outputs(pred, x_k, U, p_seq, z_k, caches)
            return evaluate_outputs(Y, U, ok, self.cost, box)

        mu0 = shift_warm_start(self._prev, self.ce) if (self.warm_start and self._prev is not None) else None
        res = ce_solve(objective, self.ce, mu0, key=(self._calls,))
        self._prev = res.sequence
        self._calls += 1
        return res


def economic_controller(predictor, ce: CeConfig = CeConfig(), ec: EconomicConfig = EconomicConfig()) -> Controller:
    return Controller("EMPC", predictor, lambda Y, U: economic_cost(Y, U, ec), ce)


def tracking_controller(predictor, tc: TrackingConfig, ce: CeConfig = CeConfig()) -> Controller:
    return Controller("MPC", predictor, lambda Y, U: tracking_cost(Y, U, tc), ce)


# ---------------------------------------------------------------- steady-state set-point

@dataclass
class Setpoint:
    y_s: np.ndarray
    u_s: np.ndarray
    cost: float
    x_s: np.ndarray

    def tracking(self, **kw) -> TrackingConfig:
        return TrackingConfig(tuple(self.y_s), tuple(self.u_s), **kw)


def settle(predictor, x0, U, p: float, n_steps: int, z0=None, tol: float = 1e-6):
    """Hold each input row of ``U`` for ``n_steps`` samples.

    Returns ``(x, y, steady)``; ``steady`` requires the last step's largest
    relative state change to fall below ``tol`` and every step to succeed.
    """
    U = np.atleast_2d(np.asarray(U, float))
    state = predictor.init_state(x0, z0, U[0], p, U.shape[0])
    cache = _JacobianCache()
    ok = np.ones(U.shape[0], bool)
    change = np.full(U.shape[0], np.inf)
    for _ in range(n_steps):
        x_prev = predictor.x_of(state)
        state, okj = predictor.advance(state, U, p, cache)
        ok &= okj
        x = predictor.x_of(state)
        change = np.max(np.abs(x - x_prev) / (np.abs(x_prev) + 1.0), axis=1)
    x = predictor.x_of(state)
    return x, plant.outputs(x, p, predictor.engine), ok & (change < tol)


def compute_setpoint(predictor, x0, p_nominal: float = plant.P_NOMINAL, ec: EconomicConfig = EconomicConfig(),
                     box: OutputBox = OutputBox(), grid: int = 5, rounds: int = 3, n_steps: int = 1000,
                     tol: float = 1e-6, z0=None, lower=plant.U_LOWER, upper=plant.U_UPPER) -> Setpoint:
    """Cheapest steady state of the model whose outputs satisfy ``box``.

    A ``grid``-point lattice over the input box is settled in one batch;
    each of ``rounds`` refinements then settles a lattice of the same size
    centred on the incumbent with half the previous spacing.
    """
    if grid < 2:
        raise ValueError("grid must be >= 2")
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    U = _lattice(lower, upper, grid)
    step = (upper - lower) / (grid - 1)
    best = None
    for r in range(rounds + 1):
        x, y, steady = settle(predictor, x0, U, p_nominal, n_steps, z0, tol)
        cost = np.where(steady & (constraint_distance(y, box) == 0.0), economic_cost(y, U, ec), np.inf)
        b = int(np.argmin(cost))
        if np.isfinite(cost[b]) and (best is None or cost[b] < best.cost):
            best = Setpoint(y[b].copy(), U[b].copy(), float(cost[b]), x[b].copy())
        if best is None:
            raise SetpointError("no steady state of the model satisfies the output constraint on the search grid")
        step = step / 2
        half = (grid - 1) / 2
        U = _lattice(np.maximum(best.u_s - half * step, lower), np.minimum(best.u_s + half * step, upper), grid)
    return best


def _lattice(lo, hi, n: int) -> np.ndarray:
    axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
    U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    return np.unique(U, axis=0)


# ---------------------------------------------------------------- closed loop

def load_profile(n_samples: int, seed: int = 0, hold: int = 200, low: float = 0.4, high: float = 0.7) -> np.ndarray:
    """Piecewise-constant engine load, a new uniform level every ``hold`` samples."""
    if n_samples <= 0 or hold <= 0:
        raise ValueError("n_samples and hold must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 12]))
    levels = rng.uniform(low, high, -(-n_samples // hold))
    return np.repeat(levels, hold)[:n_samples]


TRACE_COLUMNS = ("k", "t", "p", "F_L", "F_fuel", "F_sw", "F_CO2", "T_reb", "cost_rate", "capture_rate",
                 "pred_feasible")


@dataclass
class ClosedLoopTrace:
    """Per-sample record; ``y`` is measured at the end of each sample interval."""

    controller: str
    p: np.ndarray
    u: np.ndarray
    y: np.ndarray
    cost_rate: np.ndarray
    capture: np.ndarray
    pred_feasible: np.ndarray
    solve_time: np.ndarray
    iterations: np.ndarray
    box: OutputBox = OutputBox()
    sample_period: float = 40.0
    failure: dict | None = None

    @property
    def n(self) -> int:
        return len(self.u)

    def summary(self) -> dict:
        viol = constraint_distance(self.y, self.box) > 0
        lo, hi = plant.U_LOWER, plant.U_UPPER
        return {
            "controller": self.controller,
            "samples": self.n,
            "avg_cost_rate": float(np.mean(self.cost_rate)),
            "avg_capture_rate": float(np.mean(self.capture)),
            "truth_violation_fraction": float(np.mean(viol)),
            "predicted_feasible_fraction": float(np.mean(self.pred_feasible)),
            "inputs_in_box": bool(np.all((self.u >= lo) & (self.u <= hi))),
            "mean_solve_time": float(np.mean(self.solve_time)) if len(self.solve_time) else 0.0,
            "max_solve_time": float(np.max(self.solve_time)) if len(self.solve_time) else 0.0,
            "failure": self.failure,
        }

    def rows(self):
        for k in range(self.n):
            yield (k, (k + 1) * self.sample_period, self.p[k], *self.u[k], *self.y[k], self.cost_rate[k],
                   self.capture[k], int(self.pred_feasible[k]))

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.rows():
                w.writerow([r[0], f"{r[1]:.1f}"] + [f"{v:.10g}" for v in r[2:-1]] + [r[-1]])
        return path


def closed_loop_run(truth: PlantParams, controller: Controller, p_profile, x0, z0=None, hold: int = 10,
                    ec: EconomicConfig = EconomicConfig(), cfg: IntegratorConfig = IntegratorConfig(),
                    progress: Callable[[int, CeResult], None] | None = None) -> ClosedLoopTrace:
    """Run ``controller`` against the truth plant over ``p_profile``.

    Every ``hold`` samples the full state is measured, the controller is
    solved and its first input is held. A plant or solver failure stops the
    run; the trace then covers the samples completed so far.
    """
    p_profile = np.asarray(p_profile, float).reshape(-1)
    n = len(p_profile)
    controller.reset()
    u_log = np.empty((n, plant.NU))
    y_log = np.empty((n, plant.NY))
    feas = np.zeros(n, bool)
    times, iters = [], []
    x = np.asarray(x0, float).copy()
    z = None if z0 is None else np.asarray(z0, float).copy()
    failure = None
    done = 0
    lo, hi = plant.U_LOWER, plant.U_UPPER
    for c, k in enumerate(range(0, n, hold)):
        e = min(n, k + hold)
        t0 = time.perf_counter()
        try:
            res = controller.solve(x, p_profile[k], z)
        except Exception as exc:  # recorded, the run stops here
            failure = {"stage": "controller", "index": k, "error": repr(exc)}
            break
        times.append(time.perf_counter() - t0)
        iters.append(res.iterations)
        u = np.clip(res.u, lo, hi)
        try:
            tr = simulate_open_loop(truth, x, np.tile(u, (e - k, 1)), p_profile[k:e], cfg, z0=z)
        except StepFailure as exc:
            failure = {"stage": "plant", "index": k + (exc.index or 0), "error": repr(exc)}
            break
        u_log[k:e] = u
        y_log[k:e] = tr.y[1:]
        feas[k:e] = res.feasible
        x, z = tr.x[-1], tr.z[-1]
        done = e
        if progress is not None:
            progress(c, res)
    p = p_profile[:done]
    y = y_log[:done]
    u = u_log[:done]
    cost = economic_cost(y, u, ec)
    capture = plant.capture_rate(y, p, truth.engine)
    return ClosedLoopTrace(controller.name, p, u, y, cost, capture, feas[:done], np.asarray(times),
                           np.asarray(iters, int), controller.ce.output_box, cfg.sample_period, failure)
