"""Dense tanh MLPs in numpy: forward pass, backpropagation, Adam and training loops.

The input layer and every hidden layer apply ``tanh``; the output layer is
affine. A net with sizes ``(n_in, n_h, n_out)`` therefore computes

    y = tanh(tanh(x) @ W0 + b0) @ W1 + b1
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

INFERENCE_SIZES = (107, 150, 7)
COMPENSATION_SIZES = (114, 600, 103)
BLACKBOX_SIZES = {"NN1": (114, 500, 110), "NN2": (114, 150, 110)}


class TrainingDivergenceError(RuntimeError):
    """The training loss became non-finite."""


@dataclass
class Mlp:
    """Weights ``W[i]`` of shape (sizes[i], sizes[i+1]) and biases ``b[i]``."""

    sizes: tuple[int, ...]
    W: list[np.ndarray]
    b: list[np.ndarray]

    @classmethod
    def init(cls, sizes, seed: int | np.random.Generator = 0) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        W, b = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            lim = np.sqrt(6.0 / (n_in + n_out))
            W.append(rng.uniform(-lim, lim, (n_in, n_out)))
            b.append(np.zeros(n_out))
        return cls(sizes, W, b)

    @classmethod
    def zeros(cls, sizes) -> "Mlp":
        sizes = tuple(int(s) for s in sizes)
        return cls(sizes, [np.zeros((a, c)) for a, c in zip(sizes[:-1], sizes[1:])], [np.zeros(c) for c in sizes[1:]])

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, [w.copy() for w in self.W], [b.copy() for b in self.b])

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    def __call__(self, X):
        return mlp_forward(self, X)


def _forward_trace(model: Mlp, X: np.ndarray):
    """Activations entering every affine layer, and the output."""
    acts = [np.tanh(X)]
    for i in range(len(model.W) - 1):
        acts.append(np.tanh(acts[-1] @ model.W[i] + model.b[i]))
    return acts, acts[-1] @ model.W[-1] + model.b[-1]


def mlp_forward(model: Mlp, X) -> np.ndarray:
    X = np.asarray(X, float)
    if X.shape[-1] != model.n_in:
        raise ValueError(f"input has {X.shape[-1]} features, model expects {model.n_in}")
    single = X.ndim == 1
    _, Y = _forward_trace(model, np.atleast_2d(X))
    return Y[0] if single else Y


def mse(pred, target) -> float:
    """Mean of squared errors over every element."""
    pred = np.asarray(pred, float)
    target = np.asarray(target, float)
    if pred.size == 0:
        raise ValueError("cannot evaluate an MSE on empty input")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mlp_backprop(model: Mlp, X, T, scale: float = 1.0):
    """Loss ``scale * mean((y - T)**2)`` and its exact gradients, ordered like ``params()``."""
    X = np.atleast_2d(np.asarray(X, float))
    T = np.atleast_2d(np.asarray(T, float))
    if len(X) == 0:
        raise ValueError("batch is empty")
    acts, Y = _forward_trace(model, X)
    R = Y - T
    loss = scale * float(np.mean(R * R))
    delta = (2.0 * scale / R.size) * R
    grads: list[np.ndarray] = []
    for i in range(len(model.W) - 1, -1, -1):
        a = acts[i]
        grads = [a.T @ delta, delta.sum(axis=0)] + grads
        if i > 0:
            delta = (delta @ model.W[i].T) * (1.0 - a * a)
    return loss, grads


# ---------------------------------------------------------------- Adam

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 200
    epochs: int = 300
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 50  # stop after this many epochs without a validation improvement
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs must be >= 0 and patience >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam constants")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam step, applied in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: Mlp
    train_mse: list[float] = field(default_factory=list)  # per epoch, index 0 = before training
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val(self) -> float:
        return self.val_mse[self.best_epoch]


def train_mlp(sizes, X_train, Y_train, X_val, Y_val, cfg: TrainConfig = TrainConfig(),
              progress: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Minibatch Adam on the MSE; returns the best-validation parameters.

    Batches are drawn from a per-epoch permutation derived from ``cfg.seed``.
    """
    X_train = np.asarray(X_train, float)
    Y_train = np.asarray(Y_train, float)
    n = len(X_train)
    if n == 0:
        raise ValueError("empty training set")
    if cfg.batch_size > n:
        raise ValueError(f"batch size {cfg.batch_size} exceeds the training set size {n}")
    rng = np.random.default_rng(cfg.seed)
    model = Mlp.init(sizes, rng)
    if len(X_val) == 0:
        X_val, Y_val = X_train, Y_train
    res = TrainResult(model.copy())
    res.train_mse.append(mse(model(X_train), Y_train))
    res.val_mse.append(mse(model(X_val), Y_val))
    best = res.val_mse[0]
    params = model.params()
    state = AdamState.for_params(params)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        tot, cnt = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            loss, grads = mlp_backprop(model, X_train[idx], Y_train[idx])
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss at epoch {epoch}")
            adam_update(params, grads, state, cfg)
            tot += loss * len(idx)
            cnt += len(idx)
        res.train_mse.append(tot / cnt)
        val = mse(model(X_val), Y_val)
        if not np.isfinite(val):
            raise TrainingDivergenceError(f"non-finite validation loss at epoch {epoch}")
        res.val_mse.append(val)
        if progress is not None:
            progress(epoch, res.train_mse[-1], val)
        if val < best:
            best = val
            res.best_epoch = epoch
            res.model = model.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, res.best_epoch)
                break
    return res


# ---------------------------------------------------------------- the three networks

def features(stats, x, z, u, p, with_z: bool = True) -> np.ndarray:
    """Normalised network input ``(x, [z,] u, p)``."""
    parts = [stats.normalize("x", x)]
    if with_z:
        parts.append(stats.normalize("z", z))
    parts += [stats.normalize("u", u), stats.normalize("p", np.asarray(p, float)[..., None])]
    return np.concatenate(parts, axis=-1)


def _splits(ds):
    if ds.stats is None:
        raise ValueError("dataset must be split and normalised first")
    return ds.part("train"), ds.part("val")


def train_inference_net(ds, cfg: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """Algebraic-state inference: (x, u, p) -> z."""
    tr, va = _splits(ds)
    f = lambda sl: features(ds.stats, ds.x[sl], None, ds.u[sl], ds.p[sl], with_z=False)
    t = lambda sl: ds.stats.normalize("z", ds.z[sl])
    return train_mlp(INFERENCE_SIZES, f(tr), t(tr), f(va), t(va), cfg, progress)


def train_compensation_net(ds, cfg: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """State-dynamics compensation: (x, z, u, p) -> mismatch x_e."""
    tr, va = _splits(ds)
    f = lambda sl: features(ds.stats, ds.x[sl], ds.z[sl], ds.u[sl], ds.p[sl])
    t = lambda sl: ds.stats.normalize("x_e", ds.x_e[sl])
    return train_mlp(COMPENSATION_SIZES, f(tr), t(tr), f(va), t(va), cfg, progress)


def blackbox_target(stats, x_next, z_next) -> np.ndarray:
    return np.concatenate([stats.normalize("x", x_next), stats.normalize("z", z_next)], axis=-1)


def train_blackbox_net(ds, variant: str = "NN2", cfg: TrainConfig = TrainConfig(), progress=None) -> TrainResult:
    """Purely data-driven baseline: (x, z, u, p) -> (x_next, z_next)."""
    if variant not in BLACKBOX_SIZES:
        raise ValueError(f"unknown black-box variant {variant!r}")
    tr, va = _splits(ds)
    f = lambda sl: features(ds.stats, ds.x[sl], ds.z[sl], ds.u[sl], ds.p[sl])
    t = lambda sl: blackbox_target(ds.stats, ds.x_next[sl], ds.z_next[sl])
    return train_mlp(BLACKBOX_SIZES[variant], f(tr), t(tr), f(va), t(va), cfg, progress)


# ---------------------------------------------------------------- checkpoints

def save_model(path: str | Path, model: Mlp, stats=None, manifest: dict | None = None) -> Path:
    """Versioned ``.npz`` holding sizes, parameters, optional normalisation stats and a manifest."""
    path = Path(path).with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"version": np.array(CHECKPOINT_VERSION), "sizes": np.array(model.sizes)}
    for i, (W, b) in enumerate(zip(model.W, model.b)):
        arrays[f"W{i}"] = W
        arrays[f"b{i}"] = b
    meta = {"manifest": manifest or {}}
    if stats is not None:
        meta["normalization"] = stats.to_dict()
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    np.savez(path, **arrays)
    return path


def load_model(path: str | Path):
    """Returns ``(model, stats_dict or None, manifest)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model checkpoint not found: {path}")
    with np.load(path) as d:
        version = int(d["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        sizes = tuple(int(s) for s in d["sizes"])
        n = len(sizes) - 1
        model = Mlp(sizes, [d[f"W{i}"] for i in range(n)], [d[f"b{i}"] for i in range(n)])
        meta = json.loads(str(d["meta"]))
    return model, meta.get("normalization"), meta.get("manifest", {})
