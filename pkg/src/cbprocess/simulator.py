"""Pathwise simulation of a CB-process from its stochastic equations.

Each step of length ``dt`` applies, from the pre-step state ``X``:

1. drift ``X @ B`` with the compensator of the jumps in ``eps < |z| <= 1``
   on the measure's own coordinate, plus the mean of dropped small jumps on
   the other coordinates (those enter the equations uncompensated);
2. square-root diffusion ``sqrt(beta_k X_k) dW_k``, clamped at zero;
3. Poisson-many jumps above ``eps`` per source coordinate, with rate
   ``dt X_i pi_i(|z| > eps)``, each capped componentwise at ``truncation_n``;
4. optionally a Gaussian with the second moment of the jumps below ``eps``;
5. explosion once ``|X| >= truncation_n``: the path moves to the cemetery.

Paths are processed in vectorised blocks; all randomness comes from the
counter-based streams in :mod:`cbprocess.rng`.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import poisson

from . import rng
from .errors import ConfigError
from .levy import ZeroMeasure, levy_tail_services
from .mechanism import BranchingMechanism

CHUNK = 16384
_JUMP_SALT = 0x6A09E667F3BCC909

POLICIES = ("drift-only", "gaussian-correction")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    eps: float = 1e-2
    truncation_n: float = 1e6
    small_jump_policy: str = "drift-only"
    master_seed: int = 0
    record_grid: tuple | None = None  # None records every step

    def __post_init__(self):
        if self.record_grid is not None:
            object.__setattr__(self, "record_grid", tuple(float(t) for t in self.record_grid))
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not 0.0 < self.eps <= 1.0:
            raise ConfigError(f"eps must lie in (0, 1], got {self.eps}")
        if not self.truncation_n > 0:
            raise ConfigError(f"truncation_n must be positive, got {self.truncation_n}")
        if self.small_jump_policy not in POLICIES:
            raise ConfigError(f"unknown small-jump policy {self.small_jump_policy!r}")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")

    def to_dict(self):
        return {"dt": self.dt, "eps": self.eps, "truncation_n": self.truncation_n,
                "small_jump_policy": self.small_jump_policy, "master_seed": int(self.master_seed),
                "record_grid": None if self.record_grid is None else list(self.record_grid)}


@dataclass(frozen=True)
class SamplePath:
    """One realisation; cemetery states are rows of ``inf``."""

    times: np.ndarray
    states: np.ndarray
    lifetime: float
    explosion_level_hits: dict

    @property
    def alive(self) -> np.ndarray:
        return self.times < self.lifetime


@dataclass
class Ensemble:
    times: np.ndarray
    states: np.ndarray  # (N, R, m)
    lifetimes: np.ndarray  # (N,)
    levels: np.ndarray  # (L,)
    level_hits: np.ndarray  # (N, L)
    path_indices: np.ndarray
    integrals: np.ndarray | None = None  # (N, R), trapezoid integrals of the integrand

    def __len__(self):
        return self.lifetimes.size

    @property
    def alive(self) -> np.ndarray:
        return self.times[None, :] < self.lifetimes[:, None]

    def path(self, i: int) -> SamplePath:
        hits = {float(lv): float(h) for lv, h in zip(self.levels, self.level_hits[i])}
        return SamplePath(self.times, self.states[i], float(self.lifetimes[i]), hits)


@dataclass(frozen=True)
class _Plan:
    m: int
    dt: float
    n_steps: int
    record_steps: np.ndarray
    drift: np.ndarray
    sqrt_beta_dt: np.ndarray
    services: tuple
    sources: tuple  # rows with jumps above eps
    second_moments: np.ndarray | None
    truncation_n: float
    levels: np.ndarray
    seed: int
    times: np.ndarray = field(repr=False)


def explosion_levels(n: float) -> np.ndarray:
    ladder = [10.0 ** j for j in range(1, int(math.floor(math.log10(n))) + 1) if 10.0 ** j < n]
    return np.array(ladder + [float(n)])


def _plan(mech: BranchingMechanism, x0: np.ndarray, T: float, cfg: SimConfig) -> _Plan:
    mech.check()
    m = mech.m
    if not T > 0:
        raise ConfigError(f"horizon T must be positive, got {T}")
    n_steps = int(round(T / cfg.dt))
    if n_steps < 1 or abs(n_steps * cfg.dt - T) > 1e-9 * max(1.0, T):
        raise ConfigError(f"T={T} is not a whole number of steps dt={cfg.dt}")
    if x0.sum() >= cfg.truncation_n:
        raise ConfigError("truncation_n must exceed the initial mass")
    if cfg.record_grid is None:
        steps = np.arange(n_steps + 1)
    else:
        grid = np.asarray(cfg.record_grid)
        steps = np.rint(grid / cfg.dt).astype(np.int64)
        if np.any(np.abs(steps * cfg.dt - grid) > 1e-9 * np.maximum(1.0, grid)) or \
                np.any(steps < 0) or np.any(steps > n_steps) or np.any(np.diff(steps) <= 0):
            raise ConfigError("record times must be increasing multiples of dt within [0, T]")
    services = tuple(levy_tail_services(r.levy, cfg.eps, m) for r in mech.rows)
    drift = mech.drift_matrix.copy()
    for i, s in enumerate(services):
        if not math.isfinite(s.tail_mass):
            raise ConfigError(f"row {i + 1}: infinite jump mass above eps")
        drift[i, i] -= s.compensator[i]
        for k in range(m):
            if k != i:
                drift[i, k] += s.small_jump_mean[k]
    sources = tuple(i for i, (r, s) in enumerate(zip(mech.rows, services))
                    if not isinstance(r.levy, ZeroMeasure) and s.tail_mass > 0)
    second = None
    if cfg.small_jump_policy == "gaussian-correction":
        second = np.stack([s.small_jump_second_moment for s in services])
        if not np.any(second):
            second = None
    return _Plan(m, cfg.dt, n_steps, steps, drift, np.sqrt(mech.betas * cfg.dt), services,
                 sources, second, float(cfg.truncation_n), explosion_levels(cfg.truncation_n),
                 int(cfg.master_seed), steps * cfg.dt)


def _poisson_counts(u: np.ndarray, rate: np.ndarray) -> np.ndarray:
    counts = np.zeros(u.size, dtype=np.int64)
    p0 = np.exp(-rate)
    some = u > p0
    if not some.any():
        return counts
    one = some & (u <= p0 * (1.0 + rate))
    counts[one] = 1
    many = some & ~one
    if many.any():
        counts[many] = poisson.ppf(u[many], rate[many]).astype(np.int64)
    return counts


def _run_block(plan: _Plan, x0: np.ndarray, indices: np.ndarray,
               integrand: Callable | None):
    P, m, dt = indices.size, plan.m, plan.dt
    slots = 3 * m
    keys = rng.path_keys(plan.seed, indices)
    jkeys = rng.derive_keys(keys, _JUMP_SALT)
    X = np.tile(x0, (P, 1))
    alive = np.ones(P, dtype=bool)
    lifetime = np.full(P, np.inf)
    hits = np.full((P, plan.levels.size), np.inf)
    R = plan.record_steps.size
    states = np.empty((P, R, m))
    integrals = None
    if integrand is not None:
        integrals = np.zeros((P, R), dtype=complex)
        acc = np.zeros(P, dtype=complex)
        g_prev = np.where(alive, integrand(0.0, X), 0.0)
    _update_hits(hits, X.sum(axis=1), alive, plan.levels, 0.0)
    r = 0
    if plan.record_steps[0] == 0:
        states[:, 0] = X
        r = 1
    positions = np.arange(P)
    for s in range(plan.n_steps):
        base = np.uint64(s * slots)
        t_next = (s + 1) * dt
        pre = X
        X = pre + dt * (pre @ plan.drift)
        if plan.sqrt_beta_dt.any():
            for k in np.flatnonzero(plan.sqrt_beta_dt):
                z = rng.normals(keys, base + np.uint64(k))
                X[:, k] += plan.sqrt_beta_dt[k] * np.sqrt(np.maximum(pre[:, k], 0.0)) * z
        if plan.second_moments is not None:
            X += _small_jump_gaussian(plan, pre, keys, base + np.uint64(2 * m))
        np.maximum(X, 0.0, out=X)
        for i in plan.sources:
            svc = plan.services[i]
            rate = dt * pre[:, i] * svc.tail_mass
            u = rng.uniforms(keys, base + np.uint64(m + i))
            counts = _poisson_counts(u, rate)
            n_ev = int(counts.sum())
            if not n_ev:
                continue
            owner = np.repeat(positions, counts)
            first = np.cumsum(counts) - counts
            e_idx = np.arange(n_ev) - np.repeat(first, counts)
            ctr = (np.uint64((s * m + i) << 32)) + e_idx.astype(np.uint64)
            z = svc.jumps_from_uniforms(rng.uniforms(jkeys[owner], ctr))
            np.minimum(z, plan.truncation_n, out=z)
            for k in np.flatnonzero(z.any(axis=0)):
                X[:, k] += np.bincount(owner, weights=z[:, k], minlength=P)
        X[~alive] = 0.0
        mass = X.sum(axis=1)
        _update_hits(hits, mass, alive, plan.levels, t_next)
        dead = alive & (mass >= plan.truncation_n)
        if dead.any():
            lifetime[dead] = t_next
            alive &= ~dead
            X[dead] = 0.0
        if integrand is not None:
            g_new = np.where(alive, integrand(t_next, X), 0.0)
            acc += 0.5 * dt * (g_prev + g_new)
            g_prev = g_new
        if r < R and plan.record_steps[r] == s + 1:
            states[:, r] = X
            states[~alive, r] = np.inf
            if integrals is not None:
                integrals[:, r] = acc
            r += 1
    return states, lifetime, hits, integrals


def _update_hits(hits, mass, alive, levels, t):
    for j, level in enumerate(levels):
        new = alive & (mass >= level) & np.isinf(hits[:, j])
        hits[new, j] = t


def _small_jump_gaussian(plan, pre, keys, base):
    m = plan.m
    z = np.stack([rng.normals(keys, base + np.uint64(k)) for k in range(m)], axis=1)
    cov = plan.dt * np.einsum("pi,ikl->pkl", pre, plan.second_moments)
    if m == 1:
        return np.sqrt(np.maximum(cov[:, 0, 0], 0.0))[:, None] * z
    w, v = np.linalg.eigh(cov)
    root = v * np.sqrt(np.maximum(w, 0.0))[:, None, :]
    return np.einsum("pkl,pl->pk", root, z)


def _threads() -> int:
    n = int(os.environ.get("CB_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


def _x0(x0, m):
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    if x.size == 1 and m > 1:
        x = np.full(m, x[0])
    if x.size != m or np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ConfigError(f"x0 must be a finite point of the orthant of length {m}")
    return x


def simulate_ensemble(mech: BranchingMechanism, x0, T: float, config: SimConfig, N: int,
                      integrand: Callable | None = None, first_index: int = 0) -> Ensemble:
    """Simulate paths ``first_index, ..., first_index + N - 1``.

    ``integrand(t, X)`` (optional) is integrated along every path with the
    trapezoid rule on the step grid and recorded alongside the states; it is
    taken as 0 in the cemetery.  The output does not depend on ``CB_THREADS``.
    """
    if N < 1:
        raise ConfigError("N must be at least 1")
    x0 = _x0(x0, mech.m)
    plan = _plan(mech, x0, T, config)
    indices = np.arange(first_index, first_index + N, dtype=np.uint64)
    blocks = [indices[i:i + CHUNK] for i in range(0, N, CHUNK)]
    workers = min(_threads(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda b: _run_block(plan, x0, b, integrand), blocks))
    else:
        parts = [_run_block(plan, x0, b, integrand) for b in blocks]
    states = np.concatenate([p[0] for p in parts])
    lifetimes = np.concatenate([p[1] for p in parts])
    hits = np.concatenate([p[2] for p in parts])
    integrals = None if integrand is None else np.concatenate([p[3] for p in parts])
    return Ensemble(plan.times, states, lifetimes, plan.levels, hits, indices, integrals)


def simulate_path(mech: BranchingMechanism, x0, T: float, config: SimConfig,
                  path_index: int = 0) -> SamplePath:
    return simulate_ensemble(mech, x0, T, config, 1, first_index=path_index).path(0)


def fold_ensemble(mech: BranchingMechanism, x0, T: float, config: SimConfig, N: int,
                  func: Callable, init):
    """Apply ``acc = func(acc, path)`` over paths ``0..N-1`` in index order, block by block."""
    acc = init
    for start in range(0, N, CHUNK):
        ens = simulate_ensemble(mech, x0, T, config, min(CHUNK, N - start), first_index=start)
        for i in range(len(ens)):
            acc = func(acc, ens.path(i))
    return acc
