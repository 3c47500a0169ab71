"""Fixed-step implicit Euler for the semi-explicit index-1 plant DAE.

Each sample period is split into ``substeps`` implicit Euler stages. A stage
solves the coupled system

    x - x_prev - h f(x, z) = 0,    g(x, z) = 0

for ``(x, z)`` by modified Newton: the iteration matrix is built from a
finite-difference Jacobian, inverted once and reused for as long as the
iteration keeps contracting, then refreshed. All routines are vectorised over a
leading batch axis so that many trajectories (or candidate input sequences)
advance together.
"""
from __future__ import annotations

import functools
import hashlib
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numba as nb
import numpy as np

from . import plant
from .fastdae import FastDae
from .params import PlantParams

log = logging.getLogger(__name__)

NW = plant.NX + plant.NZ


class InitializationError(RuntimeError):
    """The algebraic equations could not be solved for a consistent state."""

    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (final residual {residual:.3e})")
        self.residual = residual


class StepFailure(RuntimeError):
    """Newton failed to converge inside a DAE step, or the state diverged."""

    def __init__(self, msg: str, index: int | None = None, diverged: bool = False):
        super().__init__(msg if index is None else f"{msg} at sample {index}")
        self.index = index
        self.diverged = diverged


@dataclass(frozen=True)
class IntegratorConfig:
    sample_period: float = 40.0
    substeps: int = 10
    newton_tol: float = 1e-8
    newton_max_iters: int = 40
    # scaled-update tolerance and the iteration count after which a stale
    # Jacobian is refreshed
    step_tol: float = 1e-10
    refresh_after: int = 6
    # rows sharing one Jacobian, grouped by similar solvent flow
    jacobian_group_size: int = 40
    # rebuild the Jacobian at the start of every stage instead of on demand
    stage_jacobian: bool = False

    def __post_init__(self):
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iters < 1:
            raise ValueError("newton_max_iters must be >= 1")
        if self.jacobian_group_size < 1:
            raise ValueError("jacobian_group_size must be >= 1")


def _variable_scale() -> np.ndarray:
    """Typical magnitude of every unknown, used to scale Newton updates."""
    s = np.ones(NW)
    for off in (plant.ABS, plant.DES):
        s[off + 25:off + 45] = 0.01  # gas concentrations
    s[plant.temperature_indices()] = 100.0
    s[plant.NX:plant.NX + 4] = 1.0
    s[plant.NX + 4:plant.NX + 6] = 0.1
    s[plant.NX + 6] = 1.0
    return s


W_SCALE = _variable_scale()


# ---------------------------------------------------------------- generic DAE

@dataclass
class Dae:
    """A semi-explicit DAE ``xdot = f(x, z, u, p)``, ``0 = g(x, z, u, p)``.

    ``rhs`` maps batched ``(x, z, u, p)`` to ``(xdot, g)``. ``scale`` gives a
    typical magnitude per unknown ``(x, z)`` for the Newton update norm.
    """

    rhs: Callable
    nx: int
    nz: int
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.scale is None:
            self.scale = np.ones(self.nx + self.nz)


@functools.lru_cache(maxsize=16)
def plant_dae_system(params: PlantParams) -> Dae:
    """The plant DAE backed by the compiled kernel (memoised per parameter set)."""
    return Dae(FastDae(params), plant.NX, plant.NZ, W_SCALE)


def _as_system(system) -> Dae:
    return system if isinstance(system, Dae) else plant_dae_system(system)


def fd_jacobian(dae: Dae, x, z, u, p, chunk: int = 96):
    """Forward-difference Jacobian of ``(f, g)`` w.r.t. ``(x, z)``: shape (B, nw, nw)."""
    B = x.shape[0]
    nx, nz = dae.nx, dae.nz
    nw = nx + nz
    w = np.concatenate([x, z], axis=1)
    delta = 1e-7 * np.maximum(np.abs(w), dae.scale)
    J = np.empty((B, nw, nw))
    f0, g0 = dae.rhs(x, z, u, p)
    F0 = np.concatenate([f0, g0], axis=1)
    for s in range(0, B, chunk):
        e = min(B, s + chunk)
        b = e - s
        W = np.repeat(w[s:e, None, :], nw, axis=1)
        idx = np.arange(nw)
        W[:, idx, idx] += delta[s:e]
        Wf = W.reshape(b * nw, nw)
        fp, gp = dae.rhs(Wf[:, :nx], Wf[:, nx:], np.repeat(u[s:e], nw, axis=0), np.repeat(p[s:e], nw, axis=0))
        Fp = np.concatenate([fp, gp], axis=1).reshape(b, nw, nw)
        # Fp[b, j, :] is the output when variable j is perturbed
        J[s:e] = np.transpose((Fp - F0[s:e, None, :]) / delta[s:e, :, None], (0, 2, 1))
    return J


def _iteration_inverse(dae: Dae, J, h):
    """Inverse of the scaled implicit-Euler iteration matrix."""
    nx = dae.nx
    M = J.copy()
    M[:, :nx, :] *= -h
    M[:, np.arange(nx), np.arange(nx)] += 1.0
    # scaled unknowns w = s * v and scaled x-residual rows
    s = dae.scale
    rs = np.concatenate([s[:nx], np.ones(dae.nz)])
    Ms = M * s[None, None, :] / rs[None, :, None]
    return np.linalg.inv(Ms)


class _JacobianCache:
    """Inverse iteration matrices shared by groups of rows.

    ``grp[b]`` indexes the inverse used by row ``b``; groups are formed from
    rows with similar solvent flow, which dominates the Jacobian's variation
    across a batch.
    """

    def __init__(self):
        self.inv = None  # (G, nw, nw)
        self.grp = None  # (B,)
        self.perm = None  # rows ordered by group
        self.bounds = None  # group k owns perm[bounds[k]:bounds[k + 1]]
        self.centers = None  # first-input centroid of each group
        self.h = None

    def valid_for(self, B, h):
        return self.inv is not None and self.h == h and self.grp.shape[0] == B

    def _index(self):
        self.perm = np.argsort(self.grp, kind="stable")
        self.bounds = np.concatenate([[0], np.cumsum(np.bincount(self.grp, minlength=self.inv.shape[0]))])

    def reassign(self, u):
        """Map rows of a new batch to the stored group with the nearest first input."""
        if self.inv is None:
            return
        self.grp = np.argmin(np.abs(u[:, :1] - self.centers[None, :]), axis=1)
        used, self.grp = np.unique(self.grp, return_inverse=True)
        self.inv = self.inv[used]
        self.centers = self.centers[used]
        self._index()


def _group_rows(rows, u, size):
    """Split ``rows`` into contiguous groups of about ``size`` after sorting by the first input."""
    order = rows[np.argsort(u[rows, 0], kind="stable")]
    n = max(1, int(np.ceil(len(order) / size)))
    return np.array_split(order, n)


def _refresh(dae: Dae, cache: _JacobianCache, x, z, u, p, h, cfg: IntegratorConfig, rows=None, size=None):
    """Rebuild inverses for ``rows`` (all rows if None), one per group of ``size`` rows."""
    B = x.shape[0]
    size = cfg.jacobian_group_size if size is None else size
    rows = np.arange(B) if rows is None else rows
    groups = _group_rows(rows, u, size)
    mid = lambda a, g: a[g].mean(axis=0)
    J = fd_jacobian(dae, np.stack([mid(x, g) for g in groups]), np.stack([mid(z, g) for g in groups]),
                    np.stack([mid(u, g) for g in groups]), np.array([mid(p, g) for g in groups]))
    inv = _iteration_inverse(dae, J, h)
    centers = np.array([u[g, 0].mean() for g in groups])
    if cache.valid_for(B, h) and len(rows) < B:
        base = cache.inv.shape[0]
        cache.inv = np.concatenate([cache.inv, inv])
        cache.centers = np.concatenate([cache.centers, centers])
    else:
        base = 0
        cache.inv = inv
        cache.centers = centers
        cache.grp = np.zeros(B, int)
    for k, g in enumerate(groups):
        cache.grp[g] = base + k
    # drop inverses no row refers to any more
    used, cache.grp = np.unique(cache.grp, return_inverse=True)
    cache.inv = cache.inv[used]
    cache.centers = cache.centers[used]
    cache.h = h
    cache._index()


def _apply_inverse(cache: _JacobianCache, R):
    """``inv[grp[b]] @ R[b]`` for every row, one matrix product per group."""
    if cache.inv.shape[0] == 1:
        return R @ cache.inv[0].T
    Rs = R[cache.perm]
    out = np.empty_like(R)
    outs = np.empty_like(Rs)
    for k in range(cache.inv.shape[0]):
        a, b = cache.bounds[k], cache.bounds[k + 1]
        np.matmul(Rs[a:b], cache.inv[k].T, out=outs[a:b])
    out[cache.perm] = outs
    return out


@nb.njit(cache=True)
def _scaled_residual(x, x_prev, f, g, h, rs, R, gmax):
    """Implicit Euler residual ``[x - x_prev - h f, g] / rs`` and ``max|g|`` per row."""
    B, nx = x.shape
    nz = g.shape[1]
    for b in range(B):
        for i in range(nx):
            R[b, i] = (x[b, i] - x_prev[b, i] - h * f[b, i]) / rs[i]
        m = 0.0
        for j in range(nz):
            R[b, nx + j] = g[b, j]
            m = max(m, abs(g[b, j]))
        gmax[b] = m


@nb.njit(cache=True)
def _newton_update(x, z, D, s, active, upd):
    """Subtract the scaled Newton correction on active rows; ``upd`` gets max|D| (NaN if non-finite)."""
    B, nx = x.shape
    nz = z.shape[1]
    for b in range(B):
        if not active[b]:
            continue
        m = 0.0
        finite = True
        for i in range(nx):
            d = D[b, i]
            x[b, i] -= d * s[i]
            finite &= np.isfinite(d)
            m = max(m, abs(d))
        for j in range(nz):
            d = D[b, nx + j]
            z[b, j] -= d * s[nx + j]
            finite &= np.isfinite(d)
            m = max(m, abs(d))
        upd[b] = m if finite else np.nan


def _stage(dae: Dae, x_prev, x, z, u, p, h, cfg: IntegratorConfig, cache: _JacobianCache):
    """One implicit Euler stage for the whole batch. Returns (x, z, converged)."""
    B = x.shape[0]
    nx = dae.nx
    s = dae.scale
    rs = np.concatenate([s[:nx], np.ones(dae.nz)])
    if not cache.valid_for(B, h) or cfg.stage_jacobian:
        _refresh(dae, cache, x_prev, z, u, p, h, cfg)
    converged = np.zeros(B, bool)
    active = np.ones(B, bool)
    n_refresh = np.zeros(B, int)
    it_since = np.zeros(B, int)
    prev_norm = np.full(B, np.inf)
    R = np.empty((B, nx + dae.nz))
    gmax = np.empty(B)
    upd = np.zeros(B)
    for it in range(cfg.newton_max_iters):
        f, g = dae.rhs(x, z, u, p)
        _scaled_residual(x, x_prev, np.ascontiguousarray(f), np.ascontiguousarray(g), h, rs, R, gmax)
        _newton_update(x, z, _apply_inverse(cache, R), s, active, upd)
        if not np.all(np.isfinite(upd[active])):
            return x, z, converged
        # accepted once the update is tiny and g was already within tolerance
        ok = active & (((upd <= cfg.step_tol * 1e2) & (gmax <= cfg.newton_tol)) | (upd <= cfg.step_tol))
        converged |= ok
        it_since[active] += 1
        slow = active & ~ok & ((upd > 0.5 * prev_norm) | (it_since >= cfg.refresh_after))
        prev_norm = np.where(active, upd, prev_norm)
        rows = np.flatnonzero(slow & (n_refresh < 2))
        if rows.size:
            # first regroup the slow rows at the current iterate, then give each its own Jacobian
            size = 1 if np.all(n_refresh[rows] >= 1) else cfg.jacobian_group_size
            _refresh(dae, cache, x, z, u, p, h, cfg, rows=rows, size=size)
            n_refresh[rows] += 1
            it_since[rows] = 0
            prev_norm[rows] = np.inf
        active &= ~ok
        if not active.any():
            break
    rest = np.flatnonzero(active)
    if rest.size:
        # final check on the residual itself
        f, g = dae.rhs(x[rest], z[rest], u[rest], p[rest])
        Rr = np.concatenate([x[rest] - x_prev[rest] - h * f, g], axis=1) / rs
        converged[rest[np.max(np.abs(Rr), axis=1) <= cfg.newton_tol]] = True
    return x, z, converged


def step_batch(system, x, z, u, p, cfg: IntegratorConfig = IntegratorConfig(), cache: _JacobianCache | None = None):
    """Advance a batch by one sample period.

    Returns ``(x_next, z_next, ok)`` where ``ok`` flags samples whose every
    stage converged and whose state stayed inside the physical temperature band.
    Never raises on numerical failure; failed rows keep their last iterate.
    """
    dae = _as_system(system)
    x = np.array(x, float, ndmin=2, copy=True)
    z = np.array(z, float, ndmin=2, copy=True)
    u = np.broadcast_to(np.asarray(u, float), (x.shape[0], np.shape(u)[-1])).copy()
    p = np.broadcast_to(np.asarray(p, float).reshape(-1), (x.shape[0],)).copy()
    h = cfg.sample_period / cfg.substeps
    if cache is None:
        cache = _JacobianCache()
    elif cache.inv is not None and cache.h == h:
        cache.reassign(u)
    ok = np.ones(x.shape[0], bool)
    for _ in range(cfg.substeps):
        x_prev = x.copy()
        x, z, conv = _stage(dae, x_prev, x, z, u, p, h, cfg, cache)
        ok &= conv
    if dae.nx == plant.NX:
        ok &= ~plant.is_diverged(x)
    ok &= np.all(np.isfinite(x), axis=1) & np.all(np.isfinite(z), axis=1)
    return x, z, ok


def dae_step(system, x, z, u, p, cfg: IntegratorConfig = IntegratorConfig(), cache=None):
    """One sample period of the discrete-time map ``(x, z) -> (x_next, z_next)``.

    ``system`` is a :class:`PlantParams` (the plant DAE) or a generic :class:`Dae`.
    Accepts a single state or a batch; raises :class:`StepFailure` if any
    sample fails.
    """
    single = np.ndim(x) == 1
    xn, zn, ok = step_batch(system, x, z, u, p, cfg, cache)
    if not np.all(ok):
        diverged = plant.is_diverged(xn) if xn.shape[1] == plant.NX else ~np.isfinite(xn).all(axis=1)
        raise StepFailure("DAE step failed" + (" (diverged state)" if np.any(diverged) else ""),
                          diverged=bool(np.any(diverged)))
    return (xn[0], zn[0]) if single else (xn, zn)


def one_step(system, x, z, u, p, cfg: IntegratorConfig = IntegratorConfig(), chunk: int = 400):
    """Independent one-step predictions for a batch of records.

    Each row gets its own Jacobian, so a row's result does not depend on the
    rest of the batch. Returns ``(x_next, z_next, ok)``.
    """
    cfg1 = replace(cfg, jacobian_group_size=1)
    x = np.atleast_2d(np.asarray(x, float))
    B = x.shape[0]
    z = np.broadcast_to(np.atleast_2d(np.asarray(z, float)), (B, np.shape(z)[-1]))
    u = np.broadcast_to(np.atleast_2d(np.asarray(u, float)), (B, np.shape(u)[-1]))
    p = np.broadcast_to(np.asarray(p, float).reshape(-1), (B,))
    xs, zs, oks = [], [], []
    for s in range(0, B, chunk):
        e = min(B, s + chunk)
        xn, zn, ok = step_batch(system, x[s:e], z[s:e], u[s:e], p[s:e], cfg1)
        xs.append(xn)
        zs.append(zn)
        oks.append(ok)
    return np.concatenate(xs), np.concatenate(zs), np.concatenate(oks)


# ---------------------------------------------------------------- initialisation

def initial_guess_z(x, u, params: PlantParams) -> np.ndarray:
    """Physically plausible algebraic state for a given differential state."""
    x = np.atleast_2d(x)
    u = np.broadcast_to(np.asarray(u, float), (x.shape[0], plant.NU))
    rp = params.reboiler
    C_in = x[:, plant.DES:plant.DES + 20].reshape(-1, 4, 5)[:, :, -1]
    c = np.maximum(C_in, 0.0)
    c = c / np.maximum(c.sum(axis=1, keepdims=True), 1e-12) * rp.rho_reb
    z = np.empty((x.shape[0], plant.NZ))
    z[:, :4] = c
    z[:, 4] = plant.boilup_fraction(x[:, plant.I_T_REB], rp)
    z[:, 5] = c[:, 1] / rp.rho_reb
    F_in = u[:, 0] * np.maximum(C_in.sum(axis=1), 1e-12)
    z[:, 6] = z[:, 4] * F_in * 8.314 * x[:, plant.I_T_REB] / rp.P_reb
    return z


def consistent_initialize(system, x, u, p, cfg: IntegratorConfig = IntegratorConfig(), z0=None,
                          params: PlantParams | None = None):
    """Solve ``g(x, z, u, p) = 0`` for ``z`` by damped Newton.

    With a warm start that already satisfies the tolerance, it is returned
    unchanged. Raises :class:`InitializationError` carrying the final residual.
    """
    dae = _as_system(system)
    single = np.ndim(x) == 1
    x = np.atleast_2d(np.asarray(x, float))
    B = x.shape[0]
    u = np.broadcast_to(np.asarray(u, float), (B, np.shape(u)[-1])).copy()
    p = np.broadcast_to(np.asarray(p, float).reshape(-1), (B,)).copy()
    if z0 is None:
        if params is None and isinstance(system, PlantParams):
            params = system
        if params is None:
            raise ValueError("a warm start z0 is required for a generic DAE")
        z0 = initial_guess_z(x, u, params)
    z = np.array(np.atleast_2d(z0), float, copy=True)
    nz = dae.nz
    zs = dae.scale[dae.nx:]

    def resid(zz, rows):
        return dae.rhs(x[rows], zz, u[rows], p[rows])[1]

    rows = np.arange(B)
    g = resid(z, rows)
    norm = np.max(np.abs(g), axis=1)
    for _ in range(cfg.newton_max_iters):
        active = rows[norm > cfg.newton_tol]
        if active.size == 0:
            break
        za = z[active]
        ga = g[active]
        delta = 1e-7 * np.maximum(np.abs(za), zs)
        Jz = np.empty((active.size, nz, nz))
        for j in range(nz):
            zp = za.copy()
            zp[:, j] += delta[:, j]
            Jz[:, :, j] = (resid(zp, active) - ga) / delta[:, j:j + 1]
        try:
            dz = -np.linalg.solve(Jz, ga[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise InitializationError("singular algebraic Jacobian", float(norm.max())) from exc
        # backtracking on the residual norm
        lam = np.ones(active.size)
        new_g = ga
        for _ls in range(12):
            trial = za + lam[:, None] * dz
            new_g = resid(trial, active)
            new_norm = np.max(np.abs(new_g), axis=1)
            worse = ~(new_norm < norm[active]) & (lam > 1e-3)
            if not np.any(worse):
                break
            lam = np.where(worse, 0.5 * lam, lam)
        z[active] = za + lam[:, None] * dz
        g[active] = new_g
        norm[active] = np.max(np.abs(new_g), axis=1)
    if np.any(norm > cfg.newton_tol) or not np.all(np.isfinite(norm)):
        raise InitializationError("consistent initialisation did not converge", float(np.nanmax(norm)))
    return z[0] if single else z


# ---------------------------------------------------------------- trajectories

@dataclass
class Trajectory:
    """States ``x``/``z``/``y`` at ``N + 1`` instants and the ``N`` applied inputs."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    u: np.ndarray
    p: np.ndarray
    z_start: np.ndarray | None = None  # z consistent with (x_k, u_k, p_k), k < N
    sample_period: float = 40.0

    @property
    def n_steps(self) -> int:
        return len(self.u)

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.sample_period


def simulate_open_loop(params: PlantParams, x0, u_seq, p_seq, cfg: IntegratorConfig = IntegratorConfig(),
                       z0=None, progress: Callable[[int], None] | None = None,
                       reuse_jacobian: bool = True) -> Trajectory:
    """Simulate the plant under piecewise-constant inputs.

    ``z`` is re-solved for consistency whenever the input or load changes, so
    every recorded ``(x_k, z_start_k, u_k, p_k)`` satisfies ``g = 0``. With
    ``reuse_jacobian=False`` every step starts from a fresh Jacobian, which
    makes each step bit-identical to :func:`one_step` on the same record.
    """
    u_seq = np.asarray(u_seq, float)
    p_seq = np.asarray(p_seq, float).reshape(-1)
    if len(u_seq) != len(p_seq):
        raise ValueError("u_seq and p_seq must have equal length")
    N = len(u_seq)
    xs = np.empty((N + 1, plant.NX))
    zs = np.empty((N + 1, plant.NZ))
    z_start = np.empty((N, plant.NZ))
    xs[0] = np.asarray(x0, float)
    z = consistent_initialize(params, xs[0], u_seq[0] if N else plant.U_NOMINAL,
                              p_seq[0] if N else plant.P_NOMINAL, cfg, z0=z0)
    zs[0] = z
    cache = _JacobianCache()
    prev = None
    for k in range(N):
        key = (tuple(u_seq[k]), p_seq[k])
        if prev is not None and key != prev:
            z = consistent_initialize(params, xs[k], u_seq[k], p_seq[k], cfg, z0=z)
        prev = key
        z_start[k] = z
        if not reuse_jacobian:
            cache = _JacobianCache()
        xn, zn, ok = step_batch(params, xs[k][None], z[None], u_seq[k][None], p_seq[k:k + 1], cfg, cache)
        if not ok[0]:
            raise StepFailure("open-loop simulation failed", index=k, diverged=bool(plant.is_diverged(xn)[0]))
        xs[k + 1], z = xn[0], zn[0]
        zs[k + 1] = z
        if progress is not None:
            progress(k)
    ys = plant.outputs(xs, np.concatenate([p_seq, p_seq[-1:]]) if N else np.full(1, plant.P_NOMINAL),
                       params.engine)
    return Trajectory(xs, zs, ys, u_seq, p_seq, z_start, cfg.sample_period)


# ---------------------------------------------------------------- steady state

def params_digest(params: PlantParams, cfg: IntegratorConfig, extra=()) -> str:
    # only settings that change the computed trajectory enter the digest
    blob = repr((asdict(params), cfg.sample_period, cfg.substeps, tuple(extra))).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def cold_start_state(params: PlantParams) -> np.ndarray:
    """A crude but valid state from which the steady-state search starts."""
    x = np.zeros(plant.NX)
    rp = params.reboiler
    lean = np.array([0.0, 0.25 * rp.x_MEA_lean * rp.rho_reb, rp.x_MEA_lean * rp.rho_reb, 0.0])
    lean[3] = rp.rho_reb - lean[:3].sum()
    C_gas, T_gas = plant.flue_gas_inlet(np.array(plant.P_NOMINAL), params)
    for off, T in ((plant.ABS, 320.0), (plant.DES, 380.0)):
        for i in range(4):
            x[off + 5 * i:off + 5 * i + 5] = lean[i]
        x[off + 20:off + 25] = T
        x[off + 45:off + 50] = T
    for i in range(4):
        x[plant.ABS + 25 + 5 * i:plant.ABS + 30 + 5 * i] = C_gas[i]
    c_des = rp.P_reb / (8.314 * 380.0)
    x[plant.DES + 25 + 5 * 3:plant.DES + 30 + 5 * 3] = 0.8 * c_des
    x[plant.DES + 25 + 5 * 1:plant.DES + 30 + 5 * 1] = 0.2 * c_des
    x[plant.I_T_TUBE] = 355.0
    x[plant.I_T_SHELL] = 360.0
    x[plant.I_T_REB] = 389.0
    return x


def find_steady_state(params: PlantParams, u=None, p=None, cfg: IntegratorConfig = IntegratorConfig(),
                      n_samples: int = 5000, x0=None, tol: float = 1e-6):
    """Simulate at constant inputs until the state settles; returns ``(x, z, max|xdot|)``."""
    u = plant.U_NOMINAL if u is None else np.asarray(u, float)
    p = plant.P_NOMINAL if p is None else float(p)
    x = cold_start_state(params) if x0 is None else np.asarray(x0, float)
    traj = simulate_open_loop(params, x, np.tile(u, (n_samples, 1)), np.full(n_samples, p), cfg)
    xs, zs = traj.x[-1], traj.z[-1]
    xdot, _ = plant.plant_dae(xs, zs, u, p, params)
    return xs, zs, float(np.max(np.abs(xdot)))


_STEADY_CACHE: dict[str, tuple[np.ndarray, np.ndarray]] = {}


def nominal_steady_state(params: PlantParams, cfg: IntegratorConfig = IntegratorConfig(),
                         cache_dir: str | Path | None = None):
    """Nominal-input steady state, cached in memory and on disk by parameter digest."""
    key = params_digest(params, cfg, ("nominal",))
    if key in _STEADY_CACHE:
        x, z = _STEADY_CACHE[key]
        return x.copy(), z.copy()
    paths = []
    if cache_dir is not None:
        paths.append(Path(cache_dir))
    paths.append(Path(__file__).parent / "data")
    for d in paths:
        f = d / f"steady_{key}.npz"
        if f.is_file():
            with np.load(f) as data:
                x, z = data["x"], data["z"]
            _STEADY_CACHE[key] = (x, z)
            return x.copy(), z.copy()
    log.info("computing nominal steady state (%s)", key)
    x, z, res = find_steady_state(params, cfg=cfg)
    if res > 1e-6:
        log.warning("steady state residual %.2e above 1e-6", res)
    _STEADY_CACHE[key] = (x, z)
    target = paths[0]
    try:
        target.mkdir(parents=True, exist_ok=True)
        np.savez(target / f"steady_{key}.npz", x=x, z=z)
    except OSError:
        log.warning("could not write steady-state cache to %s", target)
    return x.copy(), z.copy()
