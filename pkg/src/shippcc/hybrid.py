"""Hybrid predictor: imperfect first-principles step plus learned corrections.

One hybrid step infers the algebraic state from ``(x, u, p)`` with the
inference net, advances the imperfect model by one sample period from
``(x, z_hat)`` and adds the compensation net's mismatch estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import plant
from .datagen import NormStats
from .integrator import (
    IntegratorConfig, StepFailure, _JacobianCache, simulate_open_loop, step_batch,
)
from .neural import COMPENSATION_SIZES, INFERENCE_SIZES, Mlp, features, mse
from .params import EngineParams, PlantParams

# physical ranges of the algebraic state
Z_LOWER = np.zeros(plant.NZ)
Z_UPPER = np.array([np.inf, np.inf, np.inf, np.inf, 1.0, 1.0, np.inf])
_CONC = plant.concentration_indices()
_TEMP = plant.temperature_indices()


def clip_state(x) -> np.ndarray:
    """Concentrations non-negative and temperatures inside the simulator's band."""
    x = np.array(x, float, copy=True)
    x[..., _CONC] = np.maximum(x[..., _CONC], 0.0)
    x[..., _TEMP] = np.clip(x[..., _TEMP], plant.T_MIN + 1.0, plant.T_MAX - 1.0)
    return x


def clip_algebraic(z) -> np.ndarray:
    return np.clip(z, Z_LOWER, Z_UPPER)


@dataclass
class HybridModel:
    params: PlantParams  # imperfect first-principles parameters
    inference: Mlp
    compensation: Mlp
    stats: NormStats
    cfg: IntegratorConfig = IntegratorConfig()

    def __post_init__(self):
        if self.inference.sizes[0] != INFERENCE_SIZES[0] or self.inference.sizes[-1] != INFERENCE_SIZES[-1]:
            raise ValueError(f"inference net must map 107 -> 7, got {self.inference.sizes}")
        if self.compensation.sizes[0] != COMPENSATION_SIZES[0] or self.compensation.sizes[-1] != COMPENSATION_SIZES[-1]:
            raise ValueError(f"compensation net must map 114 -> 103, got {self.compensation.sizes}")
        if self.params.name != "imperfect":
            raise ValueError("the hybrid model is built on the imperfect parameter set")

    def with_cfg(self, cfg: IntegratorConfig) -> "HybridModel":
        return HybridModel(self.params, self.inference, self.compensation, self.stats, cfg)


def infer_algebraic(model: HybridModel, x, u, p) -> np.ndarray:
    """Algebraic state from the inference net, denormalised and clipped to its physical range."""
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    inp = features(model.stats, x, None, np.broadcast_to(u, x.shape[:-1] + (plant.NU,)),
                   np.broadcast_to(p, x.shape[:-1]), with_z=False)
    return clip_algebraic(model.stats.denormalize_active("z", model.inference(inp)))


def compensation(model: HybridModel, x, z, u, p) -> np.ndarray:
    """Mismatch estimate added to the imperfect one-step prediction."""
    x = np.asarray(x, float)
    inp = features(model.stats, x, z, np.broadcast_to(u, x.shape[:-1] + (plant.NU,)),
                   np.broadcast_to(np.asarray(p, float), x.shape[:-1]))
    return model.stats.denormalize_active("x_e", model.compensation(inp))


def hybrid_step_batch(model: HybridModel, x, u, p, cache: _JacobianCache | None = None):
    """Batched hybrid step; returns ``(x_next, ok)`` and never raises on solver failure."""
    x = np.atleast_2d(np.asarray(x, float))
    B = x.shape[0]
    u = np.broadcast_to(np.asarray(u, float), (B, plant.NU))
    p = np.broadcast_to(np.asarray(p, float).reshape(-1), (B,))
    z_hat = infer_algebraic(model, x, u, p)
    x_fp, _, ok = step_batch(model.params, x, z_hat, u, p, model.cfg, cache)
    return x_fp + compensation(model, x, z_hat, u, p), ok


def hybrid_step(model: HybridModel, x, u, p, cache: _JacobianCache | None = None) -> np.ndarray:
    """One hybrid prediction; raises :class:`StepFailure` if the imperfect step fails."""
    single = np.ndim(x) == 1
    xn, ok = hybrid_step_batch(model, x, u, p, cache)
    if not np.all(ok):
        raise StepFailure("imperfect-model step failed inside the hybrid predictor")
    return xn[0] if single else xn


@dataclass
class Rollout:
    """Predicted ``x``, ``z`` and outputs ``y`` at ``N + 1`` instants."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray


def _check_len(u_seq, p_seq, N):
    if N > len(u_seq) or N > len(p_seq):
        raise ValueError("rollout length exceeds the input sequences")


def hybrid_rollout(model: HybridModel, x0, u_seq, p_seq, N: int | None = None) -> Rollout:
    """Feed hybrid predictions forward for ``N`` steps, clipping to physical ranges in between."""
    u_seq = np.asarray(u_seq, float)
    p_seq = np.asarray(p_seq, float).reshape(-1)
    N = len(u_seq) if N is None else N
    _check_len(u_seq, p_seq, N)
    xs = np.empty((N + 1, plant.NX))
    xs[0] = x0
    cache = _JacobianCache()
    for k in range(N):
        xn, ok = hybrid_step_batch(model, xs[k][None], u_seq[k], p_seq[k], cache)
        if not ok[0]:
            raise StepFailure("hybrid rollout failed", index=k)
        xs[k + 1] = clip_state(xn[0])
    u_at = np.concatenate([u_seq[:N], u_seq[max(N - 1, 0):N]]) if N else u_seq[:1]
    p_at = np.concatenate([p_seq[:N], p_seq[max(N - 1, 0):N]]) if N else p_seq[:1]
    zs = infer_algebraic(model, xs, u_at, p_at)
    return Rollout(xs, zs, plant.outputs(xs, p_at, model.params.engine))


def imperfect_rollout(params: PlantParams, x0, u_seq, p_seq, N: int | None = None,
                      cfg: IntegratorConfig = IntegratorConfig(), z0=None) -> Rollout:
    """The imperfect first-principles model alone, simulated open loop."""
    u_seq = np.asarray(u_seq, float)
    p_seq = np.asarray(p_seq, float).reshape(-1)
    N = len(u_seq) if N is None else N
    _check_len(u_seq, p_seq, N)
    tr = simulate_open_loop(params, x0, u_seq[:N], p_seq[:N], cfg, z0=z0)
    # algebraic states consistent with the input applied at each instant
    zs = np.concatenate([tr.z_start, tr.z[-1:]]) if N else tr.z
    return Rollout(tr.x, zs, tr.y)


def blackbox_rollout(net: Mlp, stats: NormStats, x0, z0, u_seq, p_seq, N: int | None = None,
                     engine: EngineParams = EngineParams()) -> Rollout:
    """Feed the black-box net's predicted ``(x, z)`` forward."""
    u_seq = np.asarray(u_seq, float)
    p_seq = np.asarray(p_seq, float).reshape(-1)
    N = len(u_seq) if N is None else N
    _check_len(u_seq, p_seq, N)
    xs = np.empty((N + 1, plant.NX))
    zs = np.empty((N + 1, plant.NZ))
    xs[0], zs[0] = x0, z0
    for k in range(N):
        out = net(features(stats, xs[k], zs[k], u_seq[k], p_seq[k]))
        xs[k + 1] = clip_state(stats.denormalize_active("x", out[:plant.NX]))
        zs[k + 1] = clip_algebraic(stats.denormalize_active("z", out[plant.NX:]))
    p_at = np.concatenate([p_seq[:N], p_seq[max(N - 1, 0):N]]) if N else p_seq[:1]
    return Rollout(xs, zs, plant.outputs(xs, p_at, engine))


def state_mse(stats: NormStats, key: str, pred, true) -> float:
    """MSE of normalised values over the dimensions that varied in training.

    Constant dimensions (std at the floor) carry no information and would
    turn round-off into arbitrarily large normalised errors.
    """
    m = stats.active(key)
    return mse(stats.normalize(key, pred)[..., m], stats.normalize(key, true)[..., m])


def rollout_mse(stats: NormStats, pred: Rollout, x_true, z_true) -> dict:
    """Normalised-state MSE of a rollout against the ground truth, for x and z separately."""
    n = min(len(pred.x), len(x_true))
    return {
        "x": state_mse(stats, "x", pred.x[1:n], x_true[1:n]),
        "z": state_mse(stats, "z", pred.z[1:n], z_true[1:n]),
    }
